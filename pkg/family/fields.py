"""
模板中心处的纤维化几何：水平提升、Kodaira–Spencer 形式、测地曲率、
det E 的曲率，以及三个恒等式的数值残差

纤维维数 n = 1，所有张量都退化为标量场：g = g_{11̄}，a = a^1，A = A^1_{1̄}。
混合导数 h_{sβ̄} 先在底空间做差分，再在纤维方向求 ∂_z̄。
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from metrics.stencil import BaseStencil
from metrics.weights import FiberMetric, WeightField, fiber_metric, isometry_defect
from models.errors import GeometryError, HypothesisWarning
from projgeom.grid import integrate_fiber
from projgeom.spectral import chart_derivatives, fiber_laplacian

logger = logging.getLogger(__name__)

DEFAULT_ISOMETRY_THRESHOLD = 1e-6


@dataclass
class FamilyFields:
    """模板中心处的导出场"""
    a: np.ndarray
    A: np.ndarray
    c_phi: np.ndarray
    A_normsq: np.ndarray
    h_sb: np.ndarray
    h_ss: np.ndarray
    metric: FiberMetric

    @property
    def g(self) -> np.ndarray:
        return self.metric.scalar

    def total_space_form(self) -> np.ndarray:
        """总空间 (1,1) 形式的块矩阵 [[g, h_{s1̄}], [h_{1s̄}, h_{ss̄}]]，形状 grid.shape + (2, 2)"""
        block = np.empty(self.g.shape + (2, 2), dtype=complex)
        block[..., 0, 0] = self.g
        block[..., 0, 1] = self.h_sb
        block[..., 1, 0] = np.conj(self.h_sb)
        block[..., 1, 1] = self.h_ss
        return block


@dataclass
class DetBundleWeight:
    """det E 上度量 G = e^{−γ} 的权重 γ(s)，在模板上采样"""
    gamma: np.ndarray
    stencil: BaseStencil

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.gamma.shape != (3, 3) or not np.all(np.isfinite(self.gamma)):
            raise GeometryError(f"det E 权重需要有限的 (3, 3) 数组，得到 {self.gamma.shape}")

    @classmethod
    def from_weight(cls, weight: WeightField) -> 'DetBundleWeight':
        """取等距检验的副产品：ψ 的纤维均值"""
        return cls(isometry_defect(weight).gamma, weight.stencil)

    @classmethod
    def from_function(cls, stencil: BaseStencil, fn) -> 'DetBundleWeight':
        return cls(np.real(stencil.sample(fn)), stencil)


def family_fields(weight: WeightField) -> FamilyFields:
    """
    计算 a、A、c(φ)、|A|²

    Args:
        weight: 整个模板上纤维正定的权重

    Returns:
        模板中心处的 FamilyFields
    """
    grid = weight.grid
    stencil = weight.stencil
    reduced = weight.reduced
    metric = fiber_metric(weight)
    g = metric.scalar
    big_g = metric.conformal

    f_s = stencil.d_s(reduced)
    h_ss = np.real(stencil.d_ssb(reduced))
    d_f = chart_derivatives(grid, f_s)
    h_sb = d_f.f_zb

    a = -h_sb / g
    c_phi = h_ss - np.abs(h_sb) ** 2 / g

    z = grid.z
    q = 1.0 + grid.abs_z_sq
    g_zb = big_g * (-2.0 * z * q ** -3) + grid.fs_metric * chart_derivatives(grid, big_g).f_zb
    big_a = -(d_f.f_zbzb / g - h_sb * g_zb / g ** 2)

    logger.debug("[family] min c = %.6g, ‖A‖∞ = %.3e", np.min(c_phi), np.max(np.abs(big_a)))
    return FamilyFields(
        a=a,
        A=big_a,
        c_phi=c_phi,
        A_normsq=np.abs(big_a) ** 2,
        h_sb=h_sb,
        h_ss=h_ss,
        metric=metric,
    )


def kodaira_spencer_residual(weight: WeightField, fields: Optional[FamilyFields] = None) -> float:
    """‖A‖_∞ over the fiber"""
    fields = fields if fields is not None else family_fields(weight)
    return float(np.max(np.abs(fields.A)))


def det_curvature(det_weight: DetBundleWeight) -> float:
    """R_{ss̄} = ∂_s∂_s̄ γ at the center"""
    return float(np.real(det_weight.stencil.d_ssb(det_weight.gamma)))


def _warn_hypothesis(weight: WeightField, threshold: float, what: str) -> float:
    defect = isometry_defect(weight).center
    if defect > threshold:
        message = (f"{what}: isometry defect {defect:.3e} exceeds {threshold:.1e}, "
                   f"the identity is evaluated outside its hypothesis")
        logger.warning("[family] %s", message)
        warnings.warn(message, HypothesisWarning, stacklevel=3)
    return defect


def elliptic_residual(weight: WeightField, det_weight: DetBundleWeight,
                      fields: Optional[FamilyFields] = None,
                      threshold: float = DEFAULT_ISOMETRY_THRESHOLD) -> np.ndarray:
    """
    (□_ω − r)·c(φ) − (|A|² − R^{det E})

    Args:
        weight: O_E(1) 权重
        det_weight: det E 的权重 γ
        fields: 已计算的 FamilyFields（可选）
        threshold: 等距缺陷阈值，超出时只告警

    Returns:
        纤维上的残差场
    """
    _warn_hypothesis(weight, threshold, 'elliptic_residual')
    fields = fields if fields is not None else family_fields(weight)
    r = weight.grid.rank
    box_c = fiber_laplacian(weight.grid, fields.g, fields.c_phi)
    return box_c - r * fields.c_phi - (fields.A_normsq - det_curvature(det_weight))


def trace_identity(weight: WeightField, det_weight: DetBundleWeight,
                   fields: Optional[FamilyFields] = None,
                   threshold: float = DEFAULT_ISOMETRY_THRESHOLD) -> Tuple[float, float]:
    """lhs = ∫ r·c(φ) dμ_ω，rhs = R^{det E}/(r−1)!"""
    _warn_hypothesis(weight, threshold, 'trace_identity')
    fields = fields if fields is not None else family_fields(weight)
    grid = weight.grid
    r = grid.rank
    measure = fields.g / math.pi ** grid.n
    lhs = integrate_fiber(grid, r * fields.c_phi * measure)
    rhs = det_curvature(det_weight) / math.factorial(r - 1)
    return lhs, rhs
