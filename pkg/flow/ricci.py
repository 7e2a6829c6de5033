"""
O_E(r) 上的归一化相对 Kähler–Ricci 流 φ̇ = log(MA(φ)/μ_φ)

流在每个模板纤维上独立推进；底空间方向的量（ψ_ss̄、c(φ)、|A|²）在记录点上
由同步的轨迹事后计算。显式格式：euler（缺省）与 rk4，正定性失效时步长减半。
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import optimize

from family.fields import DetBundleWeight, elliptic_residual, family_fields
from flow.measures import DetTrivialization, ricci_potential
from metrics.weights import (
    HermitianFamily,
    WeightField,
    conformal_factor,
    is_fiberwise_positive,
    isometry_defect,
)
from models.errors import FlowError, GeometryError, PositivityError, ResolutionWarning
from projgeom.grid import FiberGrid, homogeneous_coordinates
from projgeom.spectral import fiber_laplacian, project

logger = logging.getLogger(__name__)

MAX_HALVINGS = 10
RATE_WINDOW = 1e-1
# 线性化算子 −l(l+1)/G + 1 的谱半径乘以步长不能超过的界
STABILITY_LIMITS = {'euler': 2.0, 'rk4': 2.78}


@dataclass
class FlowParams:
    dt: float = 4e-3
    tol: float = 1e-8
    t_max: float = 30.0
    scheme: str = 'euler'
    record_every: int = 10
    safety: float = 0.9

    def __post_init__(self):
        if self.scheme not in STABILITY_LIMITS:
            raise FlowError(f"未知时间格式 {self.scheme!r}")
        if not self.dt > 0:
            raise FlowError(f"步长必须为正：dt = {self.dt!r}")

    @classmethod
    def from_config(cls, config) -> 'FlowParams':
        return cls(dt=config.dt, tol=config.tol, t_max=config.t_max,
                   scheme=config.scheme, record_every=config.record_every)


@dataclass
class FlowState:
    """t 时刻的权重、速度场与实际使用的步长"""
    t: float
    weight: WeightField
    velocity: np.ndarray
    dt_used: float = 0.0

    @property
    def sup_u(self) -> float:
        return float(np.max(np.abs(self.velocity)))


def velocity(weight: WeightField, triv: DetTrivialization) -> np.ndarray:
    """每个模板纤维上投影后的 Ricci 势，形状 (3, 3) + grid.shape"""
    grid = weight.grid
    out = np.empty(weight.reduced.shape)
    for p in range(3):
        for q in range(3):
            out[p, q] = project(grid, ricci_potential(weight, triv, (p, q)))
    return out


def initial_state(weight: WeightField, triv: DetTrivialization) -> FlowState:
    return FlowState(t=0.0, weight=weight, velocity=velocity(weight, triv))


def _advance(weight: WeightField, triv: DetTrivialization, dt: float, scheme: str,
             u0: np.ndarray) -> WeightField:
    if scheme == 'euler':
        return weight.perturbed(dt * u0)
    k1 = u0
    k2 = velocity(weight.perturbed(0.5 * dt * k1), triv)
    k3 = velocity(weight.perturbed(0.5 * dt * k2), triv)
    k4 = velocity(weight.perturbed(dt * k3), triv)
    return weight.perturbed(dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def flow_step(state: FlowState, dt: float, scheme: str = 'euler',
              triv: Optional[DetTrivialization] = None) -> FlowState:
    """
    推进一步；失去纤维正定性时拒绝该步并把 dt 减半，最多 10 次

    Args:
        state: 当前状态
        dt: 步长
        scheme: 'euler' 或 'rk4'
        triv: det E 的平凡化

    Returns:
        新的 FlowState
    """
    if not dt > 0:
        raise FlowError(f"步长必须为正：dt = {dt!r}")
    if scheme not in STABILITY_LIMITS:
        raise FlowError(f"未知时间格式 {scheme!r}")
    triv = triv if triv is not None else DetTrivialization(state.weight.grid.n)
    trial = dt
    for attempt in range(MAX_HALVINGS + 1):
        try:
            candidate = _advance(state.weight, triv, trial, scheme, state.velocity)
            if is_fiberwise_positive(candidate):
                return FlowState(t=state.t + trial, weight=candidate,
                                 velocity=velocity(candidate, triv), dt_used=trial)
        except PositivityError:
            pass
        logger.debug("[flow] t = %.6g 处步长 %.3e 被拒绝（第 %d 次）", state.t, trial, attempt + 1)
        trial /= 2.0
    raise FlowError(f"step rejected: positivity lost at t = {state.t:.6g} "
                    f"after {MAX_HALVINGS} halvings of dt = {dt!r}")


def stable_dt(weight: WeightField, scheme: str = 'euler', safety: float = 0.9) -> float:
    """由带限 L 与最小共形因子估计显式格式的稳定步长"""
    grid = weight.grid
    L = grid.band_limit
    min_g = min(float(np.min(conformal_factor(grid, weight.k, weight.reduced[p, q])))
                for p in range(3) for q in range(3))
    if not min_g > 0:
        raise PositivityError("初始权重不是纤维正定的", value=min_g)
    spectral_radius = max(L * (L + 1.0) / min_g - 1.0, 1.0)
    return safety * STABILITY_LIMITS[scheme] / spectral_radius


@dataclass
class FlowDiagnostics:
    """记录点上的时间序列"""
    times: List[float] = field(default_factory=list)
    sup_u: List[float] = field(default_factory=list)
    min_c_over_r: List[float] = field(default_factory=list)
    iso_defect: List[float] = field(default_factory=list)
    psi_ss: List[float] = field(default_factory=list)
    residual_raw: List[float] = field(default_factory=list)
    residual_rescaled: List[float] = field(default_factory=list)
    rate: float = float('nan')
    converged: bool = False
    dt: float = float('nan')
    steps: int = 0
    rejected: int = 0

    def rows(self) -> List[Tuple[float, ...]]:
        n = len(self.times)
        raw = self.residual_raw or [float('nan')] * n
        rescaled = self.residual_rescaled or [float('nan')] * n
        return list(zip(self.times, self.sup_u, self.min_c_over_r, self.iso_defect,
                        self.psi_ss, raw, rescaled))


@dataclass
class Trajectory:
    """按记录间隔保存的状态快照；uniform 表示记录间隔在时间上等距"""
    states: List[FlowState]
    record_dt: float
    uniform: bool = True

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def final(self) -> FlowState:
        return self.states[-1]


def _record(diagnostics: FlowDiagnostics, state: FlowState, triv: DetTrivialization) -> None:
    weight = state.weight
    r = weight.grid.rank
    fields = family_fields(weight)
    diagnostics.times.append(state.t)
    diagnostics.sup_u.append(state.sup_u)
    diagnostics.min_c_over_r.append(float(np.min(fields.c_phi)) / r)
    diagnostics.iso_defect.append(isometry_defect(weight.rescaled(1.0 / weight.k)).center)
    diagnostics.psi_ss.append(float(np.real(weight.stencil.d_ssb(triv.psi_stencil(weight)))))


def fit_rate(times, sup_u, window: float = RATE_WINDOW, floor: float = 0.0) -> float:
    """sup|u_t| < window 之后 log sup|u_t| 对 t 的线性拟合斜率的相反数"""
    t = np.asarray(times, dtype=float)
    u = np.asarray(sup_u, dtype=float)
    mask = (u < window) & (u > max(floor, 1e-300))
    if mask.sum() < 2:
        return float('nan')
    slope = np.polyfit(t[mask], np.log(u[mask]), 1)[0]
    return float(-slope)


def run_flow(weight: WeightField, params: FlowParams,
             triv: Optional[DetTrivialization] = None) -> Tuple[Trajectory, FlowDiagnostics]:
    """
    积分到 sup|u_t| < tol 或 t_max

    Args:
        weight: O_E(r) 上纤维正定的初始权重
        params: 积分参数
        triv: det E 的平凡化

    Returns:
        (trajectory, diagnostics)；未收敛作为结果返回而不是异常
    """
    grid = weight.grid
    if abs(weight.k - grid.rank) > 1e-12:
        raise GeometryError(f"流作用在 O_E(r) 上，需要 k = {grid.rank}，得到 k = {weight.k}")
    triv = triv if triv is not None else DetTrivialization(grid.n)

    dt = params.dt
    limit = stable_dt(weight, params.scheme, params.safety)
    if dt > limit:
        message = f"dt = {dt:.3e} exceeds the stability bound {limit:.3e}, clamped"
        logger.warning("[flow] %s", message)
        warnings.warn(message, ResolutionWarning, stacklevel=2)
        dt = limit

    state = initial_state(weight, triv)
    diagnostics = FlowDiagnostics(dt=dt)
    states = [state]
    _record(diagnostics, state, triv)
    uniform = True
    step = 0
    logger.info("[flow] 开始：dt = %.3e，格式 %s，sup|u| = %.3e", dt, params.scheme, state.sup_u)

    while state.sup_u >= params.tol and state.t < params.t_max - 1e-12:
        state = flow_step(state, dt, params.scheme, triv)
        step += 1
        if state.dt_used != dt:
            diagnostics.rejected += 1
            uniform = False
        done = state.sup_u < params.tol or state.t >= params.t_max - 1e-12
        if step % params.record_every == 0 or done:
            states.append(state)
            _record(diagnostics, state, triv)
            if step % params.record_every != 0:
                uniform = False
        if step % (50 * params.record_every) == 0:
            logger.info("[flow] t = %.3f，sup|u| = %.3e", state.t, state.sup_u)

    diagnostics.steps = step
    diagnostics.converged = state.sup_u < params.tol
    diagnostics.rate = fit_rate(diagnostics.times, diagnostics.sup_u)
    if diagnostics.converged:
        logger.info("[flow] 收敛：t = %.4f，%d 步，速率 %.4f", state.t, step, diagnostics.rate)
    else:
        logger.warning("[flow] 未在 t_max = %g 内收敛（sup|u| = %.3e）", params.t_max, state.sup_u)
    return Trajectory(states, dt * params.record_every, uniform), diagnostics


@dataclass
class HermitianForm:
    """拟合得到的 r×r 正定 hermitian 形式（det M = 1）"""
    matrix: np.ndarray
    residual: float
    constant: float

    def metric(self, k: float) -> np.ndarray:
        """E 上的度量 H = e^{−const/k}·M，其诱导权重是 φ/k"""
        return math.exp(-self.constant / k) * self.matrix


def _fit_residuals(params: np.ndarray, w: np.ndarray, target: np.ndarray, k: float,
                   log_q: np.ndarray) -> np.ndarray:
    alpha = complex(params[0], params[1])
    beta = params[2]
    v0 = w[0] + np.conj(alpha) * w[1]
    quad = np.abs(v0) ** 2 + beta ** 2 * np.abs(w[1]) ** 2
    return target - k * (np.log(quad) - log_q) - params[3]


def _fit_jacobian(params: np.ndarray, w: np.ndarray, target: np.ndarray, k: float,
                  log_q: np.ndarray) -> np.ndarray:
    alpha = complex(params[0], params[1])
    beta = params[2]
    v0 = w[0] + np.conj(alpha) * w[1]
    quad = np.abs(v0) ** 2 + beta ** 2 * np.abs(w[1]) ** 2
    d_re = 2.0 * np.real(np.conj(v0) * w[1])
    d_im = 2.0 * np.real(np.conj(v0) * (-1j) * w[1])
    d_beta = 2.0 * beta * np.abs(w[1]) ** 2
    scale = -k / quad
    return np.stack([scale * d_re, scale * d_im, scale * d_beta, -np.ones_like(quad)], axis=1)


def extract_hermitian_form(grid: FiberGrid, phi_fiber: np.ndarray, k: float) -> HermitianForm:
    """
    最小二乘拟合 φ ≈ k·log(w† M⁻¹ w) + const

    参数化 M⁻¹ ∝ L L†，L 下三角且 L₁₁ = 1；拟合在约化权重上进行，
    目标函数在整个纤维上光滑。

    Args:
        grid: 纤维网格
        phi_fiber: 纤维上的权重
        k: 扭曲次数

    Returns:
        HermitianForm，residual 为拟合的 ∞ 范数
    """
    if grid.rank != 2:
        raise GeometryError("hermitian 形式的拟合只实现了 r = 2")
    log_q = np.log1p(grid.abs_z_sq).ravel()
    target = (np.asarray(phi_fiber, dtype=float) - k * np.log1p(grid.abs_z_sq)).ravel()
    w = homogeneous_coordinates(grid).reshape(2, -1)
    x0 = np.array([0.0, 0.0, 1.0, float(np.mean(target))])
    result = optimize.least_squares(
        _fit_residuals, x0, jac=_fit_jacobian, method='lm',
        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000,
        args=(w, target, k, log_q),
    )
    if result.status <= 0:
        raise FlowError(f"hermitian 形式拟合未收敛：{result.message}")

    alpha = complex(result.x[0], result.x[1])
    lower = np.array([[1.0, 0.0], [alpha, result.x[2]]], dtype=complex)
    n_form = lower @ lower.conj().T * math.exp(result.x[3] / k)
    matrix = np.linalg.inv(n_form)
    det = float(np.real(np.linalg.det(matrix)))
    matrix = matrix / math.sqrt(det)
    matrix = 0.5 * (matrix + matrix.conj().T)
    # 归一化后 φ ≈ k·log(w† M⁻¹ w) − k·log(det M)/2，det M 取归一化之前的值
    residual = float(np.max(np.abs(result.fun)))
    logger.debug("[flow] hermitian 形式拟合残差 %.3e（%d 次求值）", residual, result.nfev)
    return HermitianForm(matrix=matrix, residual=residual, constant=-0.5 * k * math.log(det))


def limit_family(weight: WeightField) -> HermitianFamily:
    """
    逐模板点拟合 hermitian 形式，插值成 E 上的度量族

    Args:
        weight: O_E(k) 权重，通常是流的极限

    Returns:
        HermitianFamily，其诱导的 O_E(1) 权重近似 φ/k
    """
    grid = weight.grid
    r = grid.rank
    samples = np.empty((3, 3, r, r), dtype=complex)
    worst = 0.0
    for p in range(3):
        for q in range(3):
            form = extract_hermitian_form(grid, weight.fiber((p, q)), weight.k)
            samples[p, q] = form.metric(weight.k)
            worst = max(worst, form.residual)
    logger.debug("[flow] 极限度量族的最大拟合残差 %.3e", worst)
    return HermitianFamily.from_samples(weight.stencil, samples)


@dataclass
class EvolutionSeries:
    """演化方程残差（内部记录点上）"""
    times: np.ndarray
    raw: np.ndarray
    rescaled: np.ndarray
    discrepancy: np.ndarray
    time_error: np.ndarray


def _center_terms(weight: WeightField, triv: DetTrivialization):
    r = weight.grid.rank
    fields = family_fields(weight)
    c = fields.c_phi
    box_c = fiber_laplacian(weight.grid, fields.g, c)
    psi_ss = float(np.real(weight.stencil.d_ssb(triv.psi_stencil(weight))))
    # ω̃ = ω/r 时 □_ω̃ c̃ = □_ω c
    raw_bracket = -box_c + r * c + fields.A_normsq - psi_ss
    rescaled_bracket = (-box_c + c + fields.A_normsq - psi_ss) / r
    return c, raw_bracket, rescaled_bracket


def evolution_residual(trajectory: Trajectory,
                       triv: Optional[DetTrivialization] = None) -> EvolutionSeries:
    """
    逐记录点的演化方程残差（sup 范数），∂_t 用中心差分

    raw：∂_t c − [−□_ω c + r·c + |A|² + ∂_s∂_s̄ log∫|u_s|²e^{−φ}]
    rescaled：∂_t c̃ − (1/r)[−□_ω̃ c̃ + r·c̃ + |A|² + ∂_s∂_s̄ log∫|u_s|²e^{−φ}]，c̃ = c/r
    """
    states = trajectory.states
    if len(states) < 3:
        raise FlowError("演化残差至少需要 3 个记录点")
    if not trajectory.uniform:
        message = "trajectory records are not uniformly spaced, time derivatives are approximate"
        logger.warning("[flow] %s", message)
        warnings.warn(message, ResolutionWarning, stacklevel=2)
    triv = triv if triv is not None else DetTrivialization(states[0].weight.grid.n)
    r = states[0].weight.grid.rank
    terms = [_center_terms(s.weight, triv) for s in states]
    c = [t[0] for t in terms]
    dt = trajectory.record_dt

    times, raw, rescaled, discrepancy, time_error = [], [], [], [], []
    for j in range(1, len(states) - 1):
        d_c = (c[j + 1] - c[j - 1]) / (states[j + 1].t - states[j - 1].t)
        raw_field = d_c - terms[j][1]
        rescaled_field = d_c / r - terms[j][2]
        times.append(states[j].t)
        raw.append(float(np.max(np.abs(raw_field))))
        rescaled.append(float(np.max(np.abs(rescaled_field))))
        discrepancy.append(float(np.max(np.abs(raw_field - rescaled_field))))
        if 2 <= j <= len(states) - 3:
            wide = (c[j + 2] - c[j - 2]) / (4.0 * dt)
            time_error.append(float(np.max(np.abs(d_c - wide))) / 3.0 / r)
        else:
            time_error.append(float('nan'))

    series = EvolutionSeries(np.array(times), np.array(raw), np.array(rescaled),
                             np.array(discrepancy), np.array(time_error))
    finite = np.isfinite(series.time_error)
    if finite.any() and np.any(series.time_error[finite] > np.maximum(series.rescaled[finite], 1e-14)):
        message = "time step too coarse: Richardson estimate of ∂_t error exceeds the residual"
        logger.warning("[flow] %s", message)
        warnings.warn(message, ResolutionWarning, stacklevel=2)
    return series


@dataclass
class PositivitySeries:
    times: np.ndarray
    min_c: np.ndarray
    first_sign_change: Optional[int]


def positivity_monitor(trajectory: Trajectory) -> PositivitySeries:
    """每个记录点上 c(φ_t) 的纤维最小值，以及第一次变号的位置"""
    min_c = np.array([float(np.min(family_fields(s.weight).c_phi)) for s in trajectory.states])
    signs = np.sign(min_c)
    change = None
    for j in range(1, len(signs)):
        if signs[j] != signs[0]:
            change = j
            logger.warning("[flow] c(φ_t) 的最小值在 t = %.4g 处变号", trajectory.states[j].t)
            break
    return PositivitySeries(trajectory.times, min_c, change)


def limit_splitting(weight: WeightField, triv: Optional[DetTrivialization] = None) -> float:
    """log det g + φ − ψ 在中心纤维上的振幅（k = n + 1）"""
    grid = weight.grid
    triv = triv if triv is not None else DetTrivialization(grid.n)
    reduced = weight.reduced[1, 1]
    big_g = conformal_factor(grid, weight.k, reduced)
    value = (np.log(big_g) + reduced + (weight.k - 2.0) * np.log1p(grid.abs_z_sq)
             - triv.psi(weight))
    return float(np.max(value) - np.min(value))


def tail_equation3(weight: WeightField) -> float:
    """收敛后 φ/r 的椭圆残差 ∞ 范数"""
    scaled = weight.rescaled(1.0 / weight.k)
    det_weight = DetBundleWeight.from_weight(scaled)
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        residual = elliptic_residual(scaled, det_weight)
    return float(np.max(np.abs(residual)))
