"""
纤维 ℙⁿ 上的求积网格

n = 1 时使用参数化 z = tan(θ/2)·e^{iφ}：极角方向取 cos θ 的 Gauss–Legendre 节点，
方位角方向取等距节点。无穷远点永远不是节点。

度量约定（全库统一）：
    g_{αβ̄} = ∂_α ∂_β̄ φ，不带 2π 因子；
    纤维积分使用归一化测度 dμ_ω = det(g) dV_euc / πⁿ，
    Fubini–Study 度量下总质量为 1/n!。
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from models.errors import GeometryError

logger = logging.getLogger(__name__)

SUPPORTED_DIMENSIONS = (1,)
MIN_RESOLUTION = 4
FS_MASS_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class FiberGrid:
    """纤维上的求积与微分网格（构造后不可变，可在线程间共享）

    场按节点存储为形状 ``shape`` 的数组：第 0 轴为极角节点（cos θ 升序，
    即从南极附近 |z| 大处到北极附近 |z| 小处），第 1 轴为方位角节点。
    """
    n: int
    n_theta: int
    n_phi: int
    x: np.ndarray
    x_weights: np.ndarray
    phi: np.ndarray
    z: np.ndarray
    quad_weights: np.ndarray
    chart: np.ndarray
    diff_matrix: np.ndarray
    legendre: np.ndarray
    fs_mass: float

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_theta, self.n_phi)

    @property
    def size(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def rank(self) -> int:
        """齐次坐标个数 r = n + 1"""
        return self.n + 1

    @property
    def band_limit(self) -> int:
        return self.legendre.shape[0] - 1

    @property
    def sin_theta(self) -> np.ndarray:
        return np.sqrt(1.0 - self.x ** 2)

    @property
    def abs_z_sq(self) -> np.ndarray:
        return np.abs(self.z) ** 2

    @property
    def nodes(self) -> List[Tuple[int, Tuple[complex, ...]]]:
        """节点列表 (chart id, 仿射坐标)"""
        return [(int(c), (complex(z),)) for c, z in zip(self.chart.ravel(), self.z.ravel())]

    @property
    def fs_density(self) -> np.ndarray:
        """标准 Fubini–Study 测度关于 dV_euc 的密度 det(g_FS)/πⁿ"""
        return 1.0 / (math.pi * (1.0 + self.abs_z_sq) ** 2)

    @property
    def fs_metric(self) -> np.ndarray:
        """g_FS = (1+|z|²)⁻² 的标量分量"""
        return (1.0 + self.abs_z_sq) ** -2

    def node_label(self, index: Tuple[int, int]) -> str:
        """出错信息里使用的节点描述"""
        i, j = (int(k) for k in index)
        return f"chart {int(self.chart[i, j])}, node ({i}, {j}), z = {complex(self.z[i, j]):.6g}"

    def check_field(self, values: np.ndarray, name: str = 'field') -> np.ndarray:
        """校验场的形状与有限性"""
        values = np.asarray(values)
        if values.shape[:2] != self.shape:
            raise GeometryError(f"{name}: 形状 {values.shape} 与网格 {self.shape} 不匹配")
        bad = ~np.isfinite(values)
        if bad.any():
            index = np.argwhere(bad)[0]
            raise GeometryError(f"{name}: 非有限值出现在 {self.node_label(index[:2])}")
        return values


def _barycentric_diff_matrix(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gauss–Legendre 节点上的重心插值微分矩阵"""
    bary = (-1.0) ** np.arange(x.size) * np.sqrt((1.0 - x ** 2) * weights)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    matrix = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(matrix, 0.0)
    np.fill_diagonal(matrix, -matrix.sum(axis=1))
    return matrix


def _normalized_legendre(x: np.ndarray, l_max: int) -> np.ndarray:
    """全归一化伴随 Legendre 函数表 P[m, l, j]（l < m 处为 0）

    递推保证 ∫∫ |P_l^m(cos θ) e^{imφ}|² dΩ = 1，高阶时不溢出。
    """
    table = np.zeros((l_max + 1, l_max + 1, x.size))
    s = np.sqrt(1.0 - x ** 2)
    pmm = np.full_like(x, 1.0 / math.sqrt(4.0 * math.pi))
    for m in range(l_max + 1):
        if m > 0:
            pmm = -math.sqrt((2 * m + 1) / (2.0 * m)) * s * pmm
        table[m, m] = pmm
        if m + 1 <= l_max:
            table[m, m + 1] = math.sqrt(2 * m + 3) * x * pmm
        for l in range(m + 2, l_max + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            table[m, l] = a * (x * table[m, l - 1] - b * table[m, l - 2])
    return table


def build_fiber_grid(n: int, resolution: Sequence[int]) -> FiberGrid:
    """
    构造纤维网格

    Args:
        n: 纤维维数（当前只支持 n = 1）
        resolution: (N_θ, N_φ)

    Returns:
        满足全部不变量的 FiberGrid
    """
    if n < 1:
        raise GeometryError(f"退化的纤维维数 n = {n}")
    if n not in SUPPORTED_DIMENSIONS:
        raise GeometryError(f"unsupported dimension n = {n}（未构建 nD 后端）")

    try:
        n_theta, n_phi = (int(k) for k in resolution)
    except (TypeError, ValueError):
        raise GeometryError(f"分辨率需要两个整数，得到 {resolution!r}")
    if n_theta < MIN_RESOLUTION or n_phi < MIN_RESOLUTION:
        raise GeometryError(f"退化的分辨率 {n_theta}×{n_phi}（每个方向至少 {MIN_RESOLUTION}）")

    x, x_weights = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    rho = np.sqrt((1.0 - x) / (1.0 + x))
    z = rho[:, None] * np.exp(1j * phi)[None, :]

    # dV_euc = (1+|z|²)²/4 · dx dφ，而 (1+|z|²)/2 = 1/(1+x)
    quad_weights = (x_weights / (1.0 + x) ** 2)[:, None] * np.full(n_phi, 2.0 * math.pi / n_phi)

    band_limit = min(n_theta - 1, (n_phi - 1) // 2)
    fs_density = 1.0 / (math.pi * (1.0 + np.abs(z) ** 2) ** 2)
    fs_mass = float(np.sum(quad_weights * fs_density))

    expected = 1.0 / math.factorial(n)
    if abs(fs_mass - expected) > FS_MASS_TOLERANCE:
        raise GeometryError(f"Fubini–Study 质量 {fs_mass!r} 偏离 1/n! = {expected}")

    grid = FiberGrid(
        n=n,
        n_theta=n_theta,
        n_phi=n_phi,
        x=x,
        x_weights=x_weights,
        phi=phi,
        z=z,
        quad_weights=quad_weights,
        chart=np.zeros((n_theta, n_phi), dtype=int),
        diff_matrix=_barycentric_diff_matrix(x, x_weights),
        legendre=_normalized_legendre(x, band_limit),
        fs_mass=fs_mass,
    )
    logger.debug("[projgeom] 网格 %d×%d，带限 L = %d，FS 质量 %.16f",
                 n_theta, n_phi, band_limit, fs_mass)
    return grid


def integrate_fiber(grid: FiberGrid, density: np.ndarray):
    """求积 Σ w_i · density_i（density 相对 dV_euc）；实输入返回 float"""
    density = grid.check_field(density, 'density')
    total = np.sum(grid.quad_weights * density)
    if np.isrealobj(density):
        return float(total)
    return complex(total)


def homogeneous_coordinates(grid: FiberGrid) -> np.ndarray:
    """图卡 z = W₂/W₁ 中的齐次坐标 w = (1, z₁, …, z_n)，形状 (r,) + grid.shape"""
    return np.stack([np.ones(grid.shape, dtype=complex), grid.z])


def coordinate_products(grid: FiberGrid, frame: np.ndarray = None) -> np.ndarray:
    """m[α, β] = W_α W̄_β / |W|²，W = frame · w；形状 (r, r) + grid.shape"""
    w = homogeneous_coordinates(grid)
    if frame is not None:
        w = np.einsum('ab,b...->a...', np.asarray(frame, dtype=complex), w)
    norm_sq = np.sum(np.abs(w) ** 2, axis=0)
    return np.einsum('a...,b...->ab...', w, np.conj(w)) / norm_sq


def _check_indices(grid: FiberGrid, indices: Sequence[int]) -> List[int]:
    r = grid.rank
    for k in indices:
        if not 1 <= int(k) <= r:
            raise GeometryError(f"齐次坐标下标 {k} 超出范围 1..{r}")
    return [int(k) - 1 for k in indices]


def fs_moment(grid: FiberGrid, indices: Sequence[int]) -> float:
    """
    Fubini–Study 矩的求积值

    两个下标：∫ W_α W̄_β / |W|² dμ_FS，闭式 δ_{αβ̄}/(n+1)!；
    四个下标：∫ W_α W̄_β W_γ W̄_δ / |W|⁴ dμ_FS，闭式 (δ_{αβ̄}δ_{γδ̄} + δ_{αδ̄}δ_{γβ̄})/(n+2)!。
    """
    if len(indices) not in (2, 4):
        raise GeometryError(f"fs_moment 需要 2 或 4 个下标，得到 {len(indices)} 个")
    idx = _check_indices(grid, indices)
    m = coordinate_products(grid)
    integrand = m[idx[0], idx[1]]
    if len(idx) == 4:
        integrand = integrand * m[idx[2], idx[3]]
    return float(np.real(integrate_fiber(grid, integrand * grid.fs_density)))


def fs_moment_closed_form(n: int, indices: Sequence[int]) -> float:
    """引理中的闭式值，用于对照"""
    def delta(i, j):
        return 1.0 if i == j else 0.0

    if len(indices) == 2:
        a, b = indices
        return delta(a, b) / math.factorial(n + 1)
    a, b, c, d = indices
    return (delta(a, b) * delta(c, d) + delta(a, d) * delta(c, b)) / math.factorial(n + 2)
