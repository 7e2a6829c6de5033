import logging
import math
import warnings

import numpy as np

from exporter.export import Exporter
from family.fields import family_fields
from flow.measures import DetTrivialization
from flow.ricci import (
    FlowDiagnostics,
    FlowParams,
    Trajectory,
    evolution_residual,
    positivity_monitor,
    run_flow,
    stable_dt,
    tail_equation3,
)
from metrics.weights import HermitianFamily, WeightField, induce_weight, perturbation_field
from models.config import PerturbationConfig
from models.errors import ResolutionWarning
from models.manifest import RunManifest, check_at_least, check_at_most
from scenarios.base import Scenario

logger = logging.getLogger(__name__)

SHORT_STEPS = 40
SHORT_RECORD = 2


class EvolveMonitorScenario(Scenario):
    """沿流监控 c(φ_t) 的演化方程残差、正定性与收敛后的椭圆方程"""

    name = 'evolve-monitor'
    checks = (
        'evolution.stationary_rescaled',
        'evolution.discrepancy',
        'evolution.dynamic_order',
        'evolution.tail_equation3',
        'determinism.csv',
    )

    def dynamic_start(self, grid, stencil) -> WeightField:
        """配置的度量族（O_E(r)）加上随底空间变化的扰动 amplitude·ss̄·Re(z²/(1+|z|²)²)"""
        weight = self.initial_weight(grid, stencil).rescaled(float(grid.rank))
        term = PerturbationConfig(kind='re_z_sq', amplitude=self.config.flow.amplitude, base=True)
        return weight.perturbed(perturbation_field(grid, stencil, term))

    def _short(self, start: WeightField, dt: float, record_every: int, t_max: float,
               triv: DetTrivialization) -> Trajectory:
        params = FlowParams(dt=dt, tol=1e-300, t_max=t_max, record_every=record_every)
        trajectory, _ = run_flow(start, params, triv)
        return trajectory

    def run(self, manifest: RunManifest) -> None:
        grid = self.flow_grid()
        stencil = self.stencil()
        r = grid.rank
        triv = DetTrivialization(grid.n)
        params = FlowParams.from_config(self.config.flow)

        # 模型族在流下静止
        model = induce_weight(HermitianFamily.exp_quadratic(), grid, stencil).rescaled(float(r))
        dt = min(params.dt, stable_dt(model, 'euler', params.safety))
        stationary, _ = run_flow(model, FlowParams(dt=dt, tol=1e-300, t_max=6 * dt,
                                                   record_every=1), triv)
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', ResolutionWarning)
            series = evolution_residual(stationary, triv)
        c_tilde = max(float(np.max(np.abs(family_fields(s.weight).c_phi))) / r
                      for s in stationary.states[1:-1])
        expected = r * (r - 1) * c_tilde
        manifest.record(check_at_most('evolution.stationary_rescaled', float(np.max(series.rescaled)),
                                      1e-10, "e^{−ss̄}I under the flow, rescaled residual"))
        manifest.record(check_at_most('evolution.discrepancy',
                                      float(np.max(np.abs(series.discrepancy - expected))), 1e-6,
                                      f"raw − rescaled vs r(r−1)c̃ = {expected:.6f}"))

        # 动态初值：dt 与 dt/2 在同样的记录间隔下比较
        start = self.dynamic_start(grid, stencil)
        dt = min(params.dt, stable_dt(start, 'euler', params.safety))
        t_max = SHORT_STEPS * dt
        coarse = self._short(start, dt, SHORT_RECORD, t_max, triv)
        fine = self._short(start, dt / 2.0, 2 * SHORT_RECORD, t_max, triv)
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', ResolutionWarning)
            coarse_res = float(np.max(evolution_residual(coarse, triv).rescaled))
            fine_res = float(np.max(evolution_residual(fine, triv).rescaled))
        order = math.log2(coarse_res / fine_res) if coarse_res > 0 and fine_res > 0 else float('nan')
        manifest.record(check_at_least('evolution.dynamic_order', order, 0.8,
                                       f"rescaled residual {coarse_res:.3e} (dt) → "
                                       f"{fine_res:.3e} (dt/2)"))

        # 完整运行到收敛，残差写进 diagnostics.csv
        trajectory, diagnostics = run_flow(start, params, triv)
        self._attach_residuals(trajectory, diagnostics, triv)
        monitor = positivity_monitor(trajectory)
        if monitor.first_sign_change is not None:
            logger.warning("[evolve-monitor] min c(φ_t) 在第 %d 个记录点变号",
                           monitor.first_sign_change)
        Exporter.export_diagnostics(diagnostics, self.path('diagnostics.csv'))
        Exporter.save_weight(trajectory.final.weight, self.path('weights', 'final.json'))
        tail = tail_equation3(trajectory.final.weight) if diagnostics.converged else float('nan')
        manifest.record(check_at_most('evolution.tail_equation3', tail, 1e-3,
                                      f"converged = {diagnostics.converged}, "
                                      f"t = {trajectory.final.t:.4f}"))

        # 同一配置与种子重复运行，CSV 必须逐字节一致
        first = self._render_short(dt, triv)
        second = self._render_short(dt, triv)
        mismatch = 0.0 if first == second else 1.0
        manifest.record(check_at_most('determinism.csv', mismatch, 0.0,
                                      f"{len(first)} bytes compared"))

    def _attach_residuals(self, trajectory: Trajectory, diagnostics: FlowDiagnostics,
                          triv: DetTrivialization) -> None:
        n = len(trajectory.states)
        if n < 3:
            return
        series = evolution_residual(trajectory, triv)
        nan = float('nan')
        diagnostics.residual_raw = [nan] + [float(v) for v in series.raw] + [nan]
        diagnostics.residual_rescaled = [nan] + [float(v) for v in series.rescaled] + [nan]

    def _render_short(self, dt: float, triv: DetTrivialization) -> str:
        start = self.dynamic_start(self.flow_grid(), self.stencil())
        params = FlowParams(dt=dt, tol=1e-300, t_max=SHORT_STEPS * dt, record_every=SHORT_RECORD)
        trajectory, diagnostics = run_flow(start, params, triv)
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', ResolutionWarning)
            self._attach_residuals(trajectory, diagnostics, triv)
        return Exporter.render_diagnostics_csv(diagnostics)
