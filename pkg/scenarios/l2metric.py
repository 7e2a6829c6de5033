import logging
import warnings
from typing import Dict, List, Tuple

import numpy as np

from directimage.l2 import (
    CurvatureReport,
    chern_curvature,
    chern_curvature_richardson,
    l2_metric,
    toweng_curvature,
)
from exporter.export import Exporter
from metrics.stencil import BaseStencil, richardson
from metrics.weights import HermitianFamily, WeightField, induce_weight
from models.errors import HypothesisWarning
from models.manifest import RunManifest, check_at_most
from scenarios.base import Scenario

logger = logging.getLogger(__name__)


class L2MetricScenario(Scenario):
    """L² 度量的复原与两条曲率路线的一致性"""

    name = 'l2metric'
    checks = (
        'l2.recovery',
        'curvature.route_agreement',
        'curvature.model_griffiths',
    )

    def corpus(self) -> List[Tuple[str, HermitianFamily]]:
        return [
            ('model', HermitianFamily.exp_quadratic()),
            ('diag12', HermitianFamily.exp_quadratic(exponent=np.diag([1.0, 2.0]))),
            ('configured', self.family()),
        ]

    def _routes(self, weight_at, stencil: BaseStencil) -> Tuple[CurvatureReport, CurvatureReport]:
        """(chern, toweng)；开启 richardson 时在 (h, h/2) 两档上外推"""
        threshold = self.config.kodaira_spencer_threshold
        coarse = weight_at(stencil)
        coarse_l2 = l2_metric(coarse)
        chern = chern_curvature(coarse_l2)
        toweng = toweng_curvature(coarse, threshold=threshold)
        if not self.config.richardson:
            return chern, toweng
        fine = weight_at(stencil.halved())
        chern = chern_curvature_richardson(chern_curvature(l2_metric(fine)), chern, coarse_l2.center)
        fine_toweng = toweng_curvature(fine, threshold=threshold)
        toweng = CurvatureReport(theta=richardson(fine_toweng.theta, toweng.theta),
                                 method='to-weng+richardson', griffiths_min=fine_toweng.griffiths_min)
        return chern, toweng

    def run(self, manifest: RunManifest) -> None:
        grid = self.grid()
        stencil = self.stencil()
        recovery = 0.0
        agreement = 0.0
        model_griffiths = float('nan')
        report: Dict = {"grid": [grid.n_theta, grid.n_phi], "h": stencil.h, "families": {}}

        for label, family in self.corpus():
            def weight_at(st: BaseStencil) -> WeightField:
                return induce_weight(family, grid, st)

            weight = weight_at(stencil)
            field = l2_metric(weight)
            expected = family.sample(stencil) / 2.0
            recovery = max(recovery, float(np.max(np.abs(field.matrices - expected))))

            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter('always', HypothesisWarning)
                chern, toweng = self._routes(weight_at, stencil)
            relative = float(np.linalg.norm(toweng.theta - chern.theta)
                             / max(np.linalg.norm(chern.theta), 1e-300))
            if caught:
                logger.warning("[l2metric] %s 不满足 Kodaira–Spencer 假设，不计入路线比较", label)
            else:
                agreement = max(agreement, relative)
            if label == 'model':
                model_griffiths = chern.griffiths_min
            logger.info("[l2metric] %s：Θ 两条路线相对差 %.3e，griffiths_min = %.6f",
                        label, relative, chern.griffiths_min)
            report["families"][label] = {
                "l2_center": [[[float(v.real), float(v.imag)] for v in row] for row in field.center],
                "chern": chern.to_dict(),
                "toweng": toweng.to_dict(),
                "relative_difference": relative,
            }

        tolerance = 5e-3 if self.config.richardson else 2e-2
        manifest.record(check_at_most('l2.recovery', recovery, 1e-6, "max |H_L2 − H/2| entrywise"))
        manifest.record(check_at_most('curvature.route_agreement', agreement, tolerance,
                                      "‖Θ_toweng − Θ_chern‖/‖Θ_chern‖"))
        manifest.record(check_at_most('curvature.model_griffiths', abs(model_griffiths - 1.0), 2e-2,
                                      "|griffiths_min − 1| on e^{−ss̄}I"))
        Exporter.export_json(report, self.path('l2metric.json'))
