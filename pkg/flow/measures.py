"""
纤维上的两个概率测度与归一化 Ricci 势

密度都相对欧氏面积元 dV_euc 给出。O_E(r) 的权重写成 φ = φ̃ + r·log(1+|z|²)，
r = n + 1 时 e^{−φ} 在无穷远处可积，且 u_s = dz ⊗ s 的范数与图卡无关。
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from metrics.stencil import CENTER
from metrics.weights import WeightField, flip_chart, fiber_metric
from projgeom.grid import FiberGrid, integrate_fiber

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetTrivialization:
    """det E 的平凡化截面 u = dz ⊗ s

    ∫|u_s|² e^{−φ} 在图卡中按 ∫ e^{−φ} dV_euc · c_n 计算，c_n = 1/πⁿ 使
    Fubini–Study 情形下 ψ 为常数。
    """
    n: int = 1

    @property
    def c_n(self) -> float:
        return 1.0 / math.pi ** self.n

    def density(self, weight: WeightField, point: Tuple[int, int] = CENTER) -> np.ndarray:
        """|u_s|² e^{−φ} 关于 dV_euc 的密度"""
        grid = weight.grid
        reduced = weight.reduced[point]
        # e^{−φ}·c_n = e^{−φ̃}·(1+|z|²)^{2−k}·(FS 密度)
        return np.exp(-reduced) * (1.0 + grid.abs_z_sq) ** (2.0 - weight.k) * grid.fs_density

    def integral(self, weight: WeightField, point: Tuple[int, int] = CENTER) -> float:
        return integrate_fiber(weight.grid, self.density(weight, point))

    def psi(self, weight: WeightField, point: Tuple[int, int] = CENTER) -> float:
        """ψ = −log ∫|u_s|² e^{−φ}"""
        return -math.log(self.integral(weight, point))

    def psi_stencil(self, weight: WeightField) -> np.ndarray:
        return np.array([[self.psi(weight, (p, q)) for q in range(3)] for p in range(3)])

    def hemisphere_split(self, weight: WeightField,
                         point: Tuple[int, int] = CENTER) -> Tuple[float, float, float]:
        """
        |z| < 1 在 z 图卡中积分，|z| > 1 在 w = 1/z 图卡中积分

        Returns:
            (北半球, 南半球, z 图卡中的整体积分)；k = n + 1 时前两者之和等于第三个
        """
        grid = weight.grid
        k = weight.k
        north_mask = _hemisphere_mask(grid)
        density_z = self.density(weight, point) * grid.quad_weights
        north = float(np.sum(density_z * north_mask))

        # w 图卡：φ_w(w) = φ_z(z) − k·log|z|²，积分元 dV_w
        phi_w = flip_chart(grid, weight.fiber(point) - k * np.log(grid.abs_z_sq))
        density_w = np.exp(-phi_w) * self.c_n * grid.quad_weights
        south = float(np.sum(density_w * north_mask))
        return north, south, float(np.sum(density_z))


def _hemisphere_mask(grid: FiberGrid) -> np.ndarray:
    """|z| < 1 的节点取 1，赤道上的节点取 1/2"""
    mask = np.where(grid.x > 0.0, 1.0, 0.0)
    mask[np.isclose(grid.x, 0.0, atol=1e-15)] = 0.5
    return np.broadcast_to(mask[:, None], grid.shape)


def ma_density(weight: WeightField, point: Tuple[int, int] = CENTER) -> Tuple[np.ndarray, float]:
    """
    Monge–Ampère 概率密度 det(g_φ)/V'

    Returns:
        (密度, V)，V = ∫ det g dV_euc/πⁿ
    """
    grid = weight.grid
    metric = fiber_metric(weight, point)
    g = metric.scalar
    mass = integrate_fiber(grid, g)
    volume = mass / math.pi ** grid.n
    return g / mass, volume


def canonical_density(weight: WeightField, triv: DetTrivialization,
                      point: Tuple[int, int] = CENTER) -> Tuple[np.ndarray, float]:
    """μ_φ = |u_s|² e^{−φ}/∫|u_s|² e^{−φ}，以及 ψ"""
    density = triv.density(weight, point)
    total = integrate_fiber(weight.grid, density)
    return density / total, -math.log(total)


def ricci_potential(weight: WeightField, triv: DetTrivialization,
                    point: Tuple[int, int] = CENTER) -> np.ndarray:
    """
    u = log(MA(φ)/μ_φ)

    按 log G − log V + φ̃ − ψ 组装（r = n + 1 时各项在整个纤维上光滑），
    而不是对两个密度取比值。
    """
    grid = weight.grid
    metric = fiber_metric(weight, point)
    volume = integrate_fiber(grid, metric.scalar) / math.pi ** grid.n
    psi = triv.psi(weight, point)
    reduced = weight.reduced[point]
    correction = (weight.k - 2.0) * np.log1p(grid.abs_z_sq)
    return np.log(metric.conformal) - math.log(volume) + reduced - psi + correction
