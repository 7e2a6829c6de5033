"""
纤维 ℙ¹ 上的谱运算

球谐变换按 Y_l^m = P̄_l^{|m|}(cos θ) e^{imφ} 展开，系数存为 (L+1, 2L+1) 数组，
第 1 轴下标为 m + L。Δ_S 在系数上是对角的 −l(l+1)，因此在网格上精确且自伴。
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from models.errors import GeometryError, PositivityError
from projgeom.grid import FiberGrid, coordinate_products, homogeneous_coordinates

logger = logging.getLogger(__name__)


def _mode_numbers(n_phi: int) -> np.ndarray:
    """FFT 列下标对应的方位角频率 m"""
    k = np.arange(n_phi)
    return np.where(k <= n_phi // 2, k, k - n_phi)


def _finish(values: np.ndarray, real: bool) -> np.ndarray:
    return np.real(values) if real else values


def sht_forward(grid: FiberGrid, f: np.ndarray) -> np.ndarray:
    """网格值到球谐系数"""
    f = grid.check_field(f)
    L = grid.band_limit
    fm = np.fft.fft(f, axis=1) / grid.n_phi
    coeffs = np.zeros((L + 1, 2 * L + 1), dtype=complex)
    weighted = 2.0 * math.pi * grid.x_weights
    for m in range(-L, L + 1):
        column = fm[:, m % grid.n_phi] * weighted
        coeffs[:, m + L] = grid.legendre[abs(m)] @ column
    return coeffs


def sht_backward(grid: FiberGrid, coeffs: np.ndarray, real: bool = False) -> np.ndarray:
    """球谐系数到网格值；real=True 时丢弃虚部"""
    L = grid.band_limit
    if coeffs.shape != (L + 1, 2 * L + 1):
        raise GeometryError(f"系数形状 {coeffs.shape} 与带限 L = {L} 不匹配")
    fm = np.zeros(grid.shape, dtype=complex)
    for m in range(-L, L + 1):
        fm[:, m % grid.n_phi] = coeffs[:, m + L] @ grid.legendre[abs(m)]
    return _finish(np.fft.ifft(fm * grid.n_phi, axis=1), real)


def project(grid: FiberGrid, f: np.ndarray) -> np.ndarray:
    """截断到 l ≤ L 的谱投影"""
    return sht_backward(grid, sht_forward(grid, f), real=np.isrealobj(f))


def sphere_laplacian(grid: FiberGrid, f: np.ndarray) -> np.ndarray:
    """单位球面 Laplace–Beltrami 算子 Δ_S（负半定）；先减去纤维均值，常数平移不进入高阶模"""
    L = grid.band_limit
    degree = np.arange(L + 1)[:, None]
    f = grid.check_field(f)
    f = f - np.sum(grid.quad_weights * grid.fs_density * f)
    coeffs = sht_forward(grid, f) * (-degree * (degree + 1.0))
    return sht_backward(grid, coeffs, real=np.isrealobj(f))


@dataclass
class PolarDerivatives:
    """(θ, φ) 坐标下的一二阶导数"""
    f_theta: np.ndarray
    f_phi: np.ndarray
    f_theta_theta: np.ndarray
    f_theta_phi: np.ndarray
    f_phi_phi: np.ndarray


def _theta_derivative(grid: FiberGrid, fm: np.ndarray, parity: np.ndarray) -> np.ndarray:
    """按模式奇偶性对 θ 求导；parity 为每列的 |m| mod 2

    偶模式是 x 的多项式，奇模式是 sin θ 乘多项式，两者都在节点上精确求导。
    """
    x = grid.x[:, None]
    s = grid.sin_theta[:, None]
    d = grid.diff_matrix
    even = -s * (d @ fm)
    q = fm / s
    odd = x * q - (1.0 - x ** 2) * (d @ q)
    return np.where(parity[None, :] == 0, even, odd)


def polar_derivatives(grid: FiberGrid, f: np.ndarray) -> PolarDerivatives:
    """θ 方向用奇偶性微分矩阵，φ 方向用 FFT"""
    f = grid.check_field(f)
    real = np.isrealobj(f)
    m = _mode_numbers(grid.n_phi)
    parity = np.abs(m) % 2
    im = 1j * m.astype(float)
    if grid.n_phi % 2 == 0:
        # Nyquist 列在奇数阶导数里没有良定义的符号
        im[grid.n_phi // 2] = 0.0

    fm = np.fft.fft(f, axis=1)
    fm_theta = _theta_derivative(grid, fm, parity)
    fm_theta_theta = _theta_derivative(grid, fm_theta, 1 - parity)
    fm_phi = fm * im[None, :]
    fm_theta_phi = fm_theta * im[None, :]
    fm_phi_phi = -fm * (m.astype(float) ** 2)[None, :]

    def back(values):
        return _finish(np.fft.ifft(values, axis=1), real)

    return PolarDerivatives(
        f_theta=back(fm_theta),
        f_phi=back(fm_phi),
        f_theta_theta=back(fm_theta_theta),
        f_theta_phi=back(fm_theta_phi),
        f_phi_phi=back(fm_phi_phi),
    )


@dataclass
class ChartDerivatives:
    """仿射图卡 z 中的复导数"""
    f_z: np.ndarray
    f_zb: np.ndarray
    f_zz: np.ndarray
    f_zbzb: np.ndarray
    f_zzb: np.ndarray


def chart_derivatives(grid: FiberGrid, f: np.ndarray) -> ChartDerivatives:
    """
    通过 z = ρe^{iφ}、ρ = tan(θ/2) 的链式法则得到复导数

    Args:
        grid: 纤维网格
        f: 节点上的光滑函数（在整个 ℙ¹ 上光滑）

    Returns:
        ChartDerivatives，其中 f_zzb 直接由谱 Laplacian 给出
    """
    polar = polar_derivatives(grid, f)
    x = grid.x[:, None]
    rho = np.abs(grid.z)
    e = np.exp(1j * grid.phi)[None, :]

    theta_r = 1.0 + x
    theta_rr = -rho * (1.0 + x) ** 2
    f_r = theta_r * polar.f_theta
    f_rr = theta_r ** 2 * polar.f_theta_theta + theta_rr * polar.f_theta
    f_rp = theta_r * polar.f_theta_phi
    f_p = polar.f_phi
    f_pp = polar.f_phi_phi

    d_bar = f_r + 1j * f_p / rho
    d = f_r - 1j * f_p / rho
    d2_bar = f_rr - 1j * f_p / rho ** 2 + 2j * f_rp / rho - f_pp / rho ** 2
    d2 = f_rr + 1j * f_p / rho ** 2 - 2j * f_rp / rho - f_pp / rho ** 2

    return ChartDerivatives(
        f_z=np.conj(e) / 2.0 * d,
        f_zb=e / 2.0 * d_bar,
        f_zz=np.conj(e) ** 2 / 4.0 * (d2 - d / rho),
        f_zbzb=e ** 2 / 4.0 * (d2_bar - d_bar / rho),
        f_zzb=grid.fs_metric * sphere_laplacian(grid, f),
    )


def check_positive(grid: FiberGrid, g: np.ndarray, name: str = 'fiber metric') -> np.ndarray:
    """逐节点检查 g > 0，失败时报出最坏节点"""
    g = np.real(grid.check_field(g, name))
    index = np.unravel_index(np.argmin(g), g.shape)
    if not g[index] > 0.0:
        node = (int(grid.chart[index]),) + tuple(int(k) for k in index)
        raise PositivityError(f"{name} 在 {grid.node_label(index)} 处非正：{g[index]!r}",
                              node=node, value=float(g[index]))
    return g


def fiber_laplacian(grid: FiberGrid, g: np.ndarray, f: np.ndarray) -> np.ndarray:
    """
    □_g f = −g^{αβ̄} ∂_α∂_β̄ f（非负算子）

    Args:
        grid: 纤维网格
        g: 纤维度量分量 g_{11̄}，形状 grid.shape 或 (1, 1) + grid.shape
        f: 实函数

    Returns:
        节点上的 □_g f
    """
    g = np.asarray(g)
    if g.ndim == 4:
        g = g[0, 0]
    g = check_positive(grid, g)
    return -np.real(grid.fs_metric * sphere_laplacian(grid, f)) / g


def eigenfunction(grid: FiberGrid, alpha: int, beta: int,
                  frame: Optional[np.ndarray] = None) -> np.ndarray:
    """e_{αβ} = r·W_β W̄_α/|W|² − δ_{αβ}，下标从 1 开始；□_FS e = r·e"""
    r = grid.rank
    if not (1 <= alpha <= r and 1 <= beta <= r):
        raise GeometryError(f"下标 ({alpha}, {beta}) 超出范围 1..{r}")
    m = coordinate_products(grid, frame)
    value = r * m[beta - 1, alpha - 1]
    if alpha == beta:
        value = np.real(value) - 1.0
    return value


@dataclass
class EigenProjection:
    """函数在第一特征空间加常数上的投影"""
    coefficients: np.ndarray
    fitted: np.ndarray
    residual: float


def _frame_measure(grid: FiberGrid, frame: np.ndarray) -> np.ndarray:
    """N = P†P 的 Fubini–Study 测度密度（总质量 1）"""
    gram = frame.conj().T @ frame
    w = homogeneous_coordinates(grid)
    quad = np.real(np.einsum('a...,ab,b...->...', np.conj(w), gram, w))
    return np.real(np.linalg.det(gram)) / (math.pi * quad ** 2)


def reconstruct(grid: FiberGrid, coefficients: np.ndarray,
                frame: Optional[np.ndarray] = None) -> np.ndarray:
    """Σ λ[α, β] W'_β W̄'_α/|W'|²"""
    m = coordinate_products(grid, frame)
    return np.real(np.einsum('ab,ba...->...', np.asarray(coefficients), m))


def eigen_project(grid: FiberGrid, f: np.ndarray,
                  frame: Optional[np.ndarray] = None) -> EigenProjection:
    """
    把 f 投影到 span{W'_β W̄'_α/|W'|²}，W' = P w

    Args:
        grid: 纤维网格
        f: 实函数
        frame: 可逆矩阵 P，缺省为单位阵

    Returns:
        EigenProjection，coefficients 为 hermitian 矩阵 λ
    """
    r = grid.rank
    frame = np.eye(r, dtype=complex) if frame is None else np.asarray(frame, dtype=complex)
    f = np.real(grid.check_field(f))
    m = coordinate_products(grid, frame)
    measure = _frame_measure(grid, frame) * grid.quad_weights

    # ∫ b_{αβ} b̄_{γδ} dμ = (δ_{αγ}δ_{βδ} + δ_{αβ}δ_{γδ})/(n+2)!，逆阵有闭式
    rhs = np.einsum('baij,ij->ab', np.conj(m), f * measure)
    v = np.eye(r).reshape(-1)
    gram_inv = math.factorial(grid.n + 2) * (np.eye(r * r) - np.outer(v, v) / (1.0 + r))
    coefficients = (gram_inv @ rhs.reshape(-1)).reshape(r, r)
    coefficients = 0.5 * (coefficients + coefficients.conj().T)

    fitted = reconstruct(grid, coefficients, frame)
    residual = float(np.max(np.abs(f - fitted)))
    logger.debug("[projgeom] 特征投影残差 %.3e", residual)
    return EigenProjection(coefficients=coefficients, fitted=fitted, residual=residual)
