"""
O_E(k) 上的度量权重、由 E 上 hermitian 度量诱导的权重、纤维 Kähler 度量与等距缺陷

权重始终以对数形式保存（从不存 e^{−φ}）。内部字段是约化权重
φ̃ = φ − k·log(1+|z|²)，它在整个 ℙ¹ 上光滑，所有纤维几何都由它计算。
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from metrics.stencil import BaseStencil, CENTER
from models.config import FamilyConfig, PerturbationConfig
from models.errors import GeometryError, PositivityError
from projgeom.grid import FiberGrid, build_fiber_grid, homogeneous_coordinates
from projgeom.spectral import check_positive, eigenfunction, sphere_laplacian

logger = logging.getLogger(__name__)

HERMITIAN_TOLERANCE = 1e-12
WEIGHT_SCHEMA = 'glab.weight/1'


def _as_hermitian(matrix, label: str) -> np.ndarray:
    """校验 hermitian 正定，失败抛 GeometryError"""
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise GeometryError(f"{label}: 需要方阵，得到形状 {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise GeometryError(f"{label}: 含非有限值")
    scale = max(1.0, float(np.max(np.abs(matrix))))
    if np.max(np.abs(matrix - matrix.conj().T)) > HERMITIAN_TOLERANCE * scale:
        raise GeometryError(f"{label}: 不是 hermitian 矩阵")
    matrix = 0.5 * (matrix + matrix.conj().T)
    try:
        linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        raise GeometryError(f"{label}: 不是正定矩阵（最小特征值 {linalg.eigvalsh(matrix)[0]!r}）")
    return matrix


def _lagrange3(x: float) -> np.ndarray:
    """节点 −1, 0, 1 上的二次 Lagrange 基"""
    return np.array([0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)])


@dataclass(frozen=True)
class HermitianFamily:
    """圆盘上 E 的 hermitian 度量族 H(s)

    Args:
        generator: s ↦ r×r 矩阵
        rank: r
        label: 日志与报告中使用的名字
    """
    generator: Callable[[complex], np.ndarray]
    rank: int
    label: str = 'family'

    def __call__(self, s: complex) -> np.ndarray:
        return _as_hermitian(self.generator(complex(s)), f"{self.label} at s = {complex(s):.3g}")

    def sample(self, stencil: BaseStencil) -> np.ndarray:
        """模板各点上的矩阵，形状 (3, 3, r, r)"""
        return stencil.sample(self)

    def scaled(self, factor: float) -> 'HermitianFamily':
        if not factor > 0:
            raise GeometryError(f"缩放因子必须为正：{factor!r}")
        return HermitianFamily(lambda s: factor * self.generator(s), self.rank,
                               f"{factor:g}·{self.label}")

    @classmethod
    def constant(cls, matrix) -> 'HermitianFamily':
        matrix = _as_hermitian(matrix, 'constant family')
        return cls(lambda s: matrix, matrix.shape[0], 'constant')

    @classmethod
    def exp_quadratic(cls, matrix=None, exponent=None, scale: float = 1.0) -> 'HermitianFamily':
        """H(s) = scale · C exp(−ss̄ D) C†，C C† = matrix"""
        chol, d = _factors(matrix, exponent)
        return cls(lambda s: scale * chol @ linalg.expm(-abs(s) ** 2 * d) @ chol.conj().T,
                   chol.shape[0], 'exp_quadratic')

    @classmethod
    def congruence(cls, matrix=None, exponent=None, shear=None,
                   scale: float = 1.0) -> 'HermitianFamily':
        """H(s) = scale · C (I + sK) exp(−ss̄ D) (I + sK)† C†"""
        chol, d = _factors(matrix, exponent)
        r = chol.shape[0]
        k = np.zeros((r, r), dtype=complex) if shear is None else np.asarray(shear, dtype=complex)

        def generator(s):
            t = chol @ (np.eye(r) + s * k)
            return scale * t @ linalg.expm(-abs(s) ** 2 * d) @ t.conj().T

        return cls(generator, r, 'congruence')

    @classmethod
    def from_samples(cls, stencil: BaseStencil, values) -> 'HermitianFamily':
        """
        模板点上的样本按双二次 Lagrange 插值延拓

        在模板点上取回样本本身，对 Re s、Im s 的二次族精确。

        Args:
            stencil: 样本所在的模板
            values: 形状 (3, 3, r, r)

        Returns:
            HermitianFamily
        """
        values = np.asarray(values, dtype=complex)
        if values.ndim != 4 or values.shape[:2] != (3, 3) or values.shape[2] != values.shape[3]:
            raise GeometryError(f"样本需要形状 (3, 3, r, r)，得到 {values.shape}")

        def generator(s):
            offset = (s - stencil.center) / stencil.h
            return np.einsum('p,q,pqab->ab', _lagrange3(offset.real), _lagrange3(offset.imag),
                             values)

        return cls(generator, values.shape[-1], 'samples')

    @classmethod
    def from_config(cls, config: FamilyConfig, rank: int = 2) -> 'HermitianFamily':
        matrix = config.matrix if config.matrix is not None else np.eye(rank)
        if config.kind == 'constant':
            return cls.constant(config.scale * np.asarray(matrix, dtype=complex))
        if config.kind == 'congruence':
            return cls.congruence(matrix, config.exponent, config.shear, config.scale)
        return cls.exp_quadratic(matrix, config.exponent, config.scale)


def _factors(matrix, exponent) -> Tuple[np.ndarray, np.ndarray]:
    if matrix is None:
        matrix = np.eye(2 if exponent is None else np.asarray(exponent).shape[0])
    matrix = _as_hermitian(matrix, 'family matrix')
    chol = linalg.cholesky(matrix, lower=True)
    r = matrix.shape[0]
    d = np.eye(r, dtype=complex) if exponent is None else np.asarray(exponent, dtype=complex)
    if d.shape != (r, r):
        raise GeometryError(f"指数矩阵形状 {d.shape} 与秩 {r} 不匹配")
    return chol, d


@dataclass(frozen=True, eq=False)
class WeightField:
    """
    O_E(k) 上的权重 φ(s, z)，在模板 × 纤维网格上采样，形状 (3, 3) + grid.shape

    内部保存 φ̃ = φ − k·log(1+|z|²)；φ 本身由 values 给出。这样沿流累积的舍入误差
    不会被 k·log(1+|z|²) 在南极附近的大数值放大。
    """
    grid: FiberGrid
    stencil: BaseStencil
    k: float
    reduced: np.ndarray

    def __post_init__(self):
        if not self.k > 0:
            raise GeometryError(f"扭曲次数 k 必须为正：{self.k!r}")
        reduced = np.asarray(self.reduced, dtype=float)
        if reduced.shape != (3, 3) + self.grid.shape:
            raise GeometryError(f"权重形状 {reduced.shape} 与模板 × 网格 "
                                f"{(3, 3) + self.grid.shape} 不匹配")
        for p in range(3):
            for q in range(3):
                self.grid.check_field(reduced[p, q], f"weight at stencil ({p}, {q})")
        object.__setattr__(self, 'reduced', reduced)

    @classmethod
    def from_values(cls, grid: FiberGrid, stencil: BaseStencil, k: float,
                    values: np.ndarray) -> 'WeightField':
        """由 φ 本身构造"""
        values = np.asarray(values, dtype=float)
        return cls(grid, stencil, k, values - k * np.log1p(grid.abs_z_sq))

    @property
    def fs_part(self) -> np.ndarray:
        return self.k * np.log1p(self.grid.abs_z_sq)

    @property
    def values(self) -> np.ndarray:
        """φ = φ̃ + k·log(1+|z|²)"""
        return self.reduced + self.fs_part

    def fiber(self, point: Tuple[int, int] = CENTER) -> np.ndarray:
        return self.values[point]

    def rescaled(self, factor: float) -> 'WeightField':
        """φ ↦ factor·φ（O_E(k) 到 O_E(factor·k)）"""
        return WeightField(self.grid, self.stencil, self.k * factor, factor * self.reduced)

    def shifted(self, alpha) -> 'WeightField':
        """φ ↦ φ + α(s)，α 为标量或 (3, 3) 数组"""
        alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (3, 3))
        return WeightField(self.grid, self.stencil, self.k,
                           self.reduced + alpha[:, :, None, None])

    def perturbed(self, delta: np.ndarray) -> 'WeightField':
        delta = np.broadcast_to(np.asarray(delta, dtype=float), self.reduced.shape)
        return WeightField(self.grid, self.stencil, self.k, self.reduced + delta)

    @classmethod
    def fubini_study(cls, grid: FiberGrid, stencil: BaseStencil, k: float = 1) -> 'WeightField':
        """k·log(1+|z|²)，即 φ̃ ≡ 0"""
        return cls(grid, stencil, k, np.zeros((3, 3) + grid.shape))

    def to_dict(self) -> Dict:
        return {
            "schema": WEIGHT_SCHEMA,
            "grid": {"n": self.grid.n, "n_theta": self.grid.n_theta, "n_phi": self.grid.n_phi},
            "stencil": {"h": self.stencil.h,
                        "center": [self.stencil.center.real, self.stencil.center.imag]},
            "k": self.k,
            "values": self.values.reshape(9, -1).tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'WeightField':
        if data.get('schema') != WEIGHT_SCHEMA:
            raise GeometryError(f"未知的权重快照格式 {data.get('schema')!r}")
        g = data['grid']
        grid = build_fiber_grid(int(g['n']), (int(g['n_theta']), int(g['n_phi'])))
        center = data['stencil'].get('center', [0.0, 0.0])
        stencil = BaseStencil(h=float(data['stencil']['h']), center=complex(center[0], center[1]))
        values = np.asarray(data['values'], dtype=float).reshape((3, 3) + grid.shape)
        return cls.from_values(grid, stencil, float(data['k']), values)


@dataclass
class FiberMetric:
    """纤维上的 Kähler 度量 g_{11̄}，以及 g = g_FS·G 中的共形因子 G"""
    g: np.ndarray
    g_inv: np.ndarray
    log_det: np.ndarray
    conformal: np.ndarray

    @property
    def scalar(self) -> np.ndarray:
        return self.g[0, 0]


def conformal_factor(grid: FiberGrid, k: float, reduced: np.ndarray) -> np.ndarray:
    """G = k + Δ_S φ̃"""
    return k + sphere_laplacian(grid, reduced)


def fiber_metric(weight: WeightField, point: Tuple[int, int] = CENTER) -> FiberMetric:
    """
    φ(s, ·) 的纤维 ∂∂̄

    Args:
        weight: 权重场
        point: 模板下标，缺省为中心

    Returns:
        FiberMetric；任一节点非正定时抛 PositivityError（带最坏节点与最小特征值）
    """
    grid = weight.grid
    big_g = conformal_factor(grid, weight.k, weight.reduced[point])
    try:
        check_positive(grid, big_g, f"fiber metric at stencil {point}")
    except PositivityError as e:
        logger.debug("[metrics] %s", e)
        raise
    g = grid.fs_metric * big_g
    return FiberMetric(
        g=g[None, None],
        g_inv=(1.0 / g)[None, None],
        log_det=np.log(big_g) - 2.0 * np.log1p(grid.abs_z_sq),
        conformal=big_g,
    )


def is_fiberwise_positive(weight: WeightField) -> bool:
    for p in range(3):
        for q in range(3):
            if np.min(conformal_factor(weight.grid, weight.k, weight.reduced[p, q])) <= 0.0:
                return False
    return True


def induce_weight(family: HermitianFamily, grid: FiberGrid, stencil: BaseStencil) -> WeightField:
    """
    E 上 hermitian 度量诱导的 O_E(1) 权重

    φ(s, z) = log(w† H(s)⁻¹ w)，w = (1, z)；限制到纤维上就是 H(s) 的 Fubini–Study 权重，
    且 l2_metric 恰好给回 H/2。

    Args:
        family: hermitian 度量族
        grid: 纤维网格
        stencil: 底空间模板

    Returns:
        k = 1 的 WeightField
    """
    if family.rank != grid.rank:
        raise GeometryError(f"度量族的秩 {family.rank} 与纤维 ℙ^{grid.n} 不匹配")
    # ŵ = w/|w|，φ̃ = log1p(ŵ†(H⁻¹ − I)ŵ)；H 接近 I 时纤维方向上没有舍入噪声
    w = homogeneous_coordinates(grid) / np.sqrt(1.0 + grid.abs_z_sq)
    identity = np.eye(grid.rank)
    reduced = np.empty((3, 3) + grid.shape)
    for p in range(3):
        for q in range(3):
            excess = linalg.inv(family(stencil.points[p, q])) - identity
            quad = np.real(np.einsum('a...,ab,b...->...', np.conj(w), excess, w))
            reduced[p, q] = np.log1p(quad)
    weight = WeightField(grid, stencil, 1, reduced)
    logger.debug("[metrics] 由 %s 诱导 O_E(1) 权重", family.label)
    return weight


@dataclass
class IsometryDefect:
    """ψ = log det g + (n+1)φ 的纤维振幅与纤维均值（即 G = e^{−γ} 的权重 γ）"""
    defect: np.ndarray
    gamma: np.ndarray

    @property
    def center(self) -> float:
        return float(self.defect[CENTER])

    @property
    def worst(self) -> float:
        return float(np.max(self.defect))


def isometry_psi(weight: WeightField, point: Tuple[int, int] = CENTER) -> np.ndarray:
    """log det g + (n+1)φ；k = 1 时等于 log G + 2φ̃，解析上没有对数奇点"""
    grid = weight.grid
    metric = fiber_metric(weight, point)
    r = grid.rank
    return (np.log(metric.conformal) + r * weight.reduced[point]
            + (r * weight.k - 2.0) * np.log1p(grid.abs_z_sq))


def isometry_defect(weight: WeightField) -> IsometryDefect:
    """各模板点上 osc_z ψ(s, ·)，以及 γ(s) = ψ 的纤维均值"""
    if abs(weight.k - 1.0) > 1e-12:
        raise GeometryError(f"等距检验需要 O_E(1) 权重，得到 k = {weight.k}")
    grid = weight.grid
    defect = np.empty((3, 3))
    gamma = np.empty((3, 3))
    for p in range(3):
        for q in range(3):
            psi = isometry_psi(weight, (p, q))
            defect[p, q] = float(np.max(psi) - np.min(psi))
            gamma[p, q] = float(np.sum(grid.quad_weights * grid.fs_density * psi))
    return IsometryDefect(defect=defect, gamma=gamma)


def flip_chart(grid: FiberGrid, values: np.ndarray) -> np.ndarray:
    """把 z 图卡节点上的值重排到 w = 1/z 图卡的同一组参数节点上

    w 的节点 (i, j) 对应 z 的节点 (N_θ−1−i, −j mod N_φ)。
    """
    values = np.asarray(values)
    flipped = values[..., ::-1, :]
    return np.roll(flipped[..., ::-1], 1, axis=-1)


def opposite_chart_metric(weight: WeightField, point: Tuple[int, int] = CENTER) -> np.ndarray:
    """在 w = 1/z 图卡中重新计算 g 并拉回 z 图卡：g_z = g_w / |z|⁴"""
    grid = weight.grid
    phi_w = flip_chart(grid, weight.fiber(point) - weight.k * np.log(grid.abs_z_sq))
    reduced_w = phi_w - weight.k * np.log1p(grid.abs_z_sq)
    g_w = grid.fs_metric * conformal_factor(grid, weight.k, reduced_w)
    return flip_chart(grid, g_w) / grid.abs_z_sq ** 2


def perturbation_field(grid: FiberGrid, stencil: BaseStencil,
                       term: PerturbationConfig) -> np.ndarray:
    """单个扰动项在模板 × 网格上的取值"""
    z = grid.z
    q = 1.0 + grid.abs_z_sq
    if term.kind == 'eigen':
        fiber = np.real(eigenfunction(grid, term.alpha, term.beta))
    elif term.kind == 're_z_sq':
        fiber = np.real(z ** 2 / q ** 2)
    elif term.kind == 're_z_frac_sq':
        fiber = np.real(z / q) ** 2
    else:
        raise GeometryError(f"扰动类型 {term.kind!r} 需要随机数发生器，请使用 random_perturbation")
    base = np.abs(stencil.points) ** 2 if term.base else np.ones((3, 3))
    return term.amplitude * base[:, :, None, None] * fiber[None, None]


def random_perturbation(weight: WeightField, rng: np.random.Generator, count: int = 3,
                        amplitude: float = 0.3, max_halvings: int = 30) -> np.ndarray:
    """
    随机特征函数组合，幅度由 t = 0 处的正定性线搜索限制

    Args:
        weight: 被扰动的权重
        rng: 带种子的随机数发生器
        count: 组合项数
        amplitude: 初始幅度（sup 范数）

    Returns:
        扰动场，形状 (3, 3) + grid.shape
    """
    grid = weight.grid
    r = grid.rank
    pairs = [(a, b) for a in range(1, r + 1) for b in range(a, r + 1)]
    fiber = np.zeros(grid.shape)
    for _ in range(count):
        alpha, beta = pairs[int(rng.integers(len(pairs)))]
        coefficient = complex(rng.normal(), rng.normal() if alpha != beta else 0.0)
        fiber += np.real(coefficient * eigenfunction(grid, alpha, beta))
    fiber /= max(float(np.max(np.abs(fiber))), 1e-300)

    scale = amplitude
    for _ in range(max_halvings):
        delta = np.broadcast_to(scale * fiber, weight.reduced.shape)
        if is_fiberwise_positive(weight.perturbed(delta)):
            logger.debug("[metrics] 随机扰动幅度 %.4g", scale)
            return np.array(delta)
        scale /= 2.0
    raise PositivityError("随机扰动的线搜索未能保持纤维正定性")


def apply_perturbations(weight: WeightField, terms: List[PerturbationConfig],
                        rng: Optional[np.random.Generator] = None) -> WeightField:
    """把配置中的扰动项依次加到权重上"""
    for term in terms:
        if term.kind == 'random':
            rng = rng if rng is not None else np.random.default_rng(0)
            weight = weight.perturbed(random_perturbation(weight, rng, term.count, term.amplitude))
        else:
            weight = weight.perturbed(perturbation_field(weight.grid, weight.stencil, term))
    return weight
