import itertools
import logging

import numpy as np

from metrics.weights import fiber_metric, opposite_chart_metric
from models.manifest import RunManifest, check_at_most
from projgeom.grid import fs_moment, fs_moment_closed_form, integrate_fiber
from projgeom.spectral import eigenfunction, fiber_laplacian, project
from scenarios.base import Scenario

logger = logging.getLogger(__name__)


class VerifyIdentitiesScenario(Scenario):
    """纤维上的闭式恒等式：FS 矩、特征函数关系、Laplacian 自伴性、图卡协变性"""

    name = 'verify-identities'
    checks = (
        'fs_moment.two_index',
        'fs_moment.four_index',
        'eigenfunction.relation',
        'laplacian.self_adjoint',
        'chart.covariance',
    )

    def run(self, manifest: RunManifest) -> None:
        grid = self.grid()
        r = grid.rank
        logger.info("[verify-identities] 网格 %d×%d，带限 L = %d",
                    grid.n_theta, grid.n_phi, grid.band_limit)

        worst = {2: 0.0, 4: 0.0}
        for size in (2, 4):
            for indices in itertools.product(range(1, r + 1), repeat=size):
                error = abs(fs_moment(grid, indices) - fs_moment_closed_form(grid.n, indices))
                worst[size] = max(worst[size], error)
        manifest.record(check_at_most('fs_moment.two_index', worst[2], 1e-10,
                                      "max |∫W_αW̄_β/|W|² dμ − δ/(n+1)!|"))
        manifest.record(check_at_most('fs_moment.four_index', worst[4], 1e-10,
                                      "max over all 16 index combinations"))

        relation = 0.0
        for alpha in range(1, r + 1):
            for beta in range(1, r + 1):
                e = eigenfunction(grid, alpha, beta)
                for part in (np.real(e), np.imag(e)):
                    box = fiber_laplacian(grid, grid.fs_metric, part)
                    relation = max(relation, float(np.max(np.abs(box - r * part))))
        manifest.record(check_at_most('eigenfunction.relation', relation, 1e-6,
                                      "max ‖□_FS e_αβ − r·e_αβ‖∞"))

        rng = self.rng()
        f = project(grid, rng.normal(size=grid.shape))
        h = project(grid, rng.normal(size=grid.shape))
        conformal = 1.0 + 0.5 * np.real(eigenfunction(grid, 1, 2)) ** 2
        g = grid.fs_metric * conformal
        measure = g / np.pi
        left = integrate_fiber(grid, f * fiber_laplacian(grid, g, h) * measure)
        right = integrate_fiber(grid, h * fiber_laplacian(grid, g, f) * measure)
        scale = max(abs(left), abs(right), 1.0)
        manifest.record(check_at_most('laplacian.self_adjoint', abs(left - right) / scale, 1e-10,
                                      "|⟨f, □h⟩ − ⟨□f, h⟩| under the quadrature"))

        weight = self.initial_weight(grid, self.stencil())
        covariance = float(np.max(np.abs(opposite_chart_metric(weight) / fiber_metric(weight).scalar
                                          - 1.0)))
        manifest.record(check_at_most('chart.covariance', covariance, 1e-8,
                                      "g recomputed in the w = 1/z chart, relative"))
