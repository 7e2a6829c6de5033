import logging
import math

import numpy as np

from directimage.l2 import theorem1_report
from exporter.export import Exporter
from family.fields import (
    DetBundleWeight,
    elliptic_residual,
    family_fields,
    kodaira_spencer_residual,
    trace_identity,
)
from metrics.weights import HermitianFamily, WeightField, induce_weight, isometry_defect
from models.config import FamilyConfig
from models.manifest import RunManifest, check_at_least, check_at_most
from scenarios.base import Scenario

logger = logging.getLogger(__name__)

DIAG12 = np.diag([1.0, 2.0])
# 配置为缺省模型族时，配置项检查改用非平凡标架的族
FRAME_MATRIX = np.array([[2.0, 0.5j], [-0.5j, 1.0]])
FRAME_EXPONENT = np.array([[1.0, 0.3j], [-0.3j, 2.0]])


class CheckTheorem1Scenario(Scenario):
    """诱导度量族上的三个恒等式，以及 Θ = δλ/r! 的端到端复核"""

    name = 'check-theorem1'
    checks = (
        'induced.isometry_defect',
        'induced.kodaira_spencer',
        'induced.elliptic_residual',
        'induced.elliptic_order',
        'induced.trace_identity',
        'theorem1.lambda',
        'theorem1.delta',
        'theorem1.delta_oscillation',
        'theorem1.theta_match',
        'theorem1.griffiths',
        'theorem1.configured_theta_match',
    )

    def configured_weight(self, grid, stencil) -> WeightField:
        if self.config.family == FamilyConfig():
            logger.info("[check-theorem1] 配置的是缺省模型族，改用非平凡标架的族")
            family = HermitianFamily.exp_quadratic(matrix=FRAME_MATRIX, exponent=FRAME_EXPONENT)
            return induce_weight(family, grid, stencil)
        return self.initial_weight(grid, stencil)

    def _elliptic(self, family, grid, stencil) -> float:
        weight = induce_weight(family, grid, stencil)
        residual = elliptic_residual(weight, DetBundleWeight.from_weight(weight),
                                     threshold=self.config.isometry_threshold)
        return float(np.max(np.abs(residual)))

    def run(self, manifest: RunManifest) -> None:
        grid = self.grid()
        stencil = self.stencil()
        threshold = self.config.isometry_threshold
        suite = {
            'model': HermitianFamily.exp_quadratic(),
            'diag12': HermitianFamily.exp_quadratic(exponent=DIAG12),
        }

        defect = kodaira = elliptic = trace = 0.0
        for label, family in suite.items():
            weight = induce_weight(family, grid, stencil)
            fields = family_fields(weight)
            det_weight = DetBundleWeight.from_weight(weight)
            defect = max(defect, isometry_defect(weight).worst)
            kodaira = max(kodaira, kodaira_spencer_residual(weight, fields))
            residual = elliptic_residual(weight, det_weight, fields, threshold)
            elliptic = max(elliptic, float(np.max(np.abs(residual))))
            lhs, rhs = trace_identity(weight, det_weight, fields, threshold)
            trace = max(trace, abs(lhs - rhs))
            logger.info("[check-theorem1] %s：椭圆残差 %.3e，迹恒等式 %.6f vs %.6f",
                        label, float(np.max(np.abs(residual))), lhs, rhs)

        coarse = self._elliptic(suite['diag12'], grid, stencil)
        fine = self._elliptic(suite['diag12'], grid, stencil.halved())
        order = math.log2(coarse / fine) if fine > 0 and coarse > 0 else float('nan')

        manifest.record(check_at_most('induced.isometry_defect', defect, 1e-8,
                                      "max osc_z(log det g + rφ) over the stencil"))
        manifest.record(check_at_most('induced.kodaira_spencer', kodaira, 1e-6, "‖A‖∞"))
        manifest.record(check_at_most('induced.elliptic_residual', elliptic, 3e-3,
                                      "‖(□ − r)c − (|A|² − R)‖∞"))
        manifest.record(check_at_least('induced.elliptic_order', order, 1.8,
                                       f"h = {stencil.h:g} vs h/2 on diag(1, 2): "
                                       f"{coarse:.3e} → {fine:.3e}"))
        manifest.record(check_at_most('induced.trace_identity', trace, 1e-4,
                                      "|∫ r·c dμ − R/(r−1)!|"))

        model = theorem1_report(induce_weight(suite['model'], grid, stencil),
                                threshold=threshold, seed=self.config.seed)
        manifest.record(check_at_most('theorem1.lambda',
                                      float(np.max(np.abs(model.lam - np.eye(grid.rank)))), 1e-4,
                                      "max |λ − I| on e^{−ss̄}I"))
        manifest.record(check_at_most('theorem1.delta', abs(model.delta - 1.0), 1e-6, "|δ − 1|"))
        manifest.record(check_at_most('theorem1.delta_oscillation', model.delta_oscillation, 1e-6,
                                      "osc of e^{−φ}·(w†Nw)^r over the fiber"))
        manifest.record(check_at_most('theorem1.theta_match', model.relative_error, 2e-2,
                                      "‖Θ_fd − δλ/r!‖/‖Θ_fd‖"))
        manifest.record(check_at_most('theorem1.griffiths', abs(model.griffiths_min - 1.0), 2e-2,
                                      f"verdict: {model.to_dict()['verdict']}"))

        configured = theorem1_report(self.configured_weight(grid, stencil), threshold=threshold,
                                     seed=self.config.seed)
        manifest.record(check_at_most('theorem1.configured_theta_match',
                                      configured.relative_error, 2e-2,
                                      f"configured family, verdict: "
                                      f"{configured.to_dict()['verdict']}"))
        Exporter.export_json({"model": model.to_dict(), "configured": configured.to_dict()},
                             self.path('theorem1.json'))
