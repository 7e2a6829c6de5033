import math
import warnings

import numpy as np
import pytest

from family.fields import (
    DetBundleWeight,
    det_curvature,
    elliptic_residual,
    family_fields,
    kodaira_spencer_residual,
    trace_identity,
)
from metrics.stencil import BaseStencil
from metrics.weights import HermitianFamily, induce_weight, perturbation_field
from models.config import PerturbationConfig
from models.errors import HypothesisWarning

DIAG12 = np.diag([1.0, 2.0])


def _induced(grid, h=1e-2, center=0j, **kwargs):
    stencil = BaseStencil(h=h, center=center)
    return induce_weight(HermitianFamily.exp_quadratic(**kwargs), grid, stencil)


def test_product_family_has_no_variation(grid):
    stencil = BaseStencil()
    weight = induce_weight(HermitianFamily.constant(np.diag([2.0, 0.5])), grid, stencil)
    fields = family_fields(weight)
    assert np.max(np.abs(fields.a)) < 1e-12
    assert np.max(np.abs(fields.A)) < 1e-12
    assert np.max(np.abs(fields.c_phi)) < 1e-9


def test_model_family_fields(grid):
    fields = family_fields(_induced(grid))
    assert np.max(np.abs(fields.a)) < 1e-12
    assert np.max(np.abs(fields.A)) < 1e-12
    assert np.max(np.abs(fields.c_phi - 1.0)) < 1e-8


def test_scaling_law(grid):
    stencil = BaseStencil(center=0.3 + 0.1j)
    family = HermitianFamily.congruence(exponent=DIAG12, shear=[[0.2, 0.1], [0.0, -0.3]])
    weight = induce_weight(family, grid, stencil)
    base = family_fields(weight)
    scaled = family_fields(weight.rescaled(2.0))
    assert np.allclose(scaled.a, base.a, rtol=1e-9, atol=1e-12)
    assert np.allclose(scaled.A, base.A, rtol=1e-9, atol=1e-12)
    assert np.allclose(scaled.c_phi, 2.0 * base.c_phi, rtol=1e-9, atol=1e-12)
    assert np.allclose(scaled.A_normsq, base.A_normsq, rtol=1e-9, atol=1e-20)


@pytest.mark.parametrize("family", [
    HermitianFamily.exp_quadratic(),
    HermitianFamily.exp_quadratic(exponent=DIAG12),
])
def test_kodaira_spencer_vanishes_for_induced(family, grid):
    weight = induce_weight(family, grid, BaseStencil())
    assert kodaira_spencer_residual(weight) < 1e-6


def test_kodaira_spencer_off_axis_congruence(grid):
    family = HermitianFamily.congruence(exponent=DIAG12, shear=[[0.2, 0.1], [0.0, -0.3]])
    weight = induce_weight(family, grid, BaseStencil(h=1e-3, center=0.2))
    assert kodaira_spencer_residual(weight) < 1e-4


def test_kodaira_spencer_detects_perturbation(grid):
    weight = _induced(grid, center=0.5)
    term = PerturbationConfig(kind='re_z_sq', amplitude=0.05, base=True)
    perturbed = weight.perturbed(perturbation_field(grid, weight.stencil, term))
    assert kodaira_spencer_residual(perturbed) > 1e-3


def test_schur_complement_matches_total_space_positivity(grid):
    weight = _induced(grid, center=0.1)
    term = PerturbationConfig(kind='re_z_sq', amplitude=40.0, base=True)
    fields = family_fields(weight.perturbed(perturbation_field(grid, weight.stencil, term)))
    assert np.min(fields.c_phi) < 0.0 < np.max(fields.c_phi)

    rng = np.random.default_rng(2)
    block = fields.total_space_form()
    checked = 0
    for _ in range(200):
        i, j = rng.integers(grid.n_theta), rng.integers(grid.n_phi)
        c = fields.c_phi[i, j]
        if abs(c) < 1e-3:
            continue
        positive = np.linalg.eigvalsh(block[i, j])[0] > 0.0
        assert positive == (c > 0.0)
        checked += 1
    assert checked > 100


def test_det_curvature_of_quadratic_weight():
    stencil = BaseStencil()
    assert abs(det_curvature(DetBundleWeight.from_function(stencil, lambda s: 2 * abs(s) ** 2)) - 2) < 1e-9
    assert abs(det_curvature(DetBundleWeight.from_function(stencil, lambda s: 5.0))) < 1e-12


def test_det_curvature_from_model_family(grid):
    weight = _induced(grid)
    assert abs(det_curvature(DetBundleWeight.from_weight(weight)) - 2.0) < 1e-8


def test_elliptic_residual_model_family(grid):
    weight = _induced(grid)
    residual = elliptic_residual(weight, DetBundleWeight.from_weight(weight))
    assert np.max(np.abs(residual)) < 1e-7


def test_elliptic_residual_product_family(grid):
    stencil = BaseStencil()
    weight = induce_weight(HermitianFamily.constant(np.eye(2)), grid, stencil)
    det_weight = DetBundleWeight.from_function(stencil, lambda s: 0.0)
    assert np.max(np.abs(elliptic_residual(weight, det_weight))) < 1e-8


def test_elliptic_residual_diagonal_family_converges(grid):
    norms = []
    for h in (1e-2, 5e-3):
        weight = _induced(grid, h=h, exponent=DIAG12)
        norms.append(np.max(np.abs(elliptic_residual(weight, DetBundleWeight.from_weight(weight)))))
    assert norms[0] <= 3e-3
    order = math.log(norms[0] / norms[1], 2)
    assert order >= 1.8


def test_elliptic_residual_warns_outside_hypothesis(grid):
    weight = _induced(grid)
    term = PerturbationConfig(kind='re_z_frac_sq', amplitude=0.1)
    perturbed = weight.perturbed(perturbation_field(grid, weight.stencil, term))
    with pytest.warns(HypothesisWarning):
        residual = elliptic_residual(perturbed, DetBundleWeight.from_weight(weight))
    assert np.all(np.isfinite(residual))


def test_trace_identity(grid):
    weight = _induced(grid)
    lhs, rhs = trace_identity(weight, DetBundleWeight.from_weight(weight))
    assert abs(lhs - 2.0) < 1e-7 and abs(rhs - 2.0) < 1e-7

    weight = _induced(grid, exponent=DIAG12)
    with warnings.catch_warnings():
        warnings.simplefilter("error", HypothesisWarning)
        lhs, rhs = trace_identity(weight, DetBundleWeight.from_weight(weight))
    assert abs(lhs - rhs) < 1e-4
    assert abs(rhs - 3.0) < 1e-4


def test_trace_identity_product_family(grid):
    stencil = BaseStencil()
    weight = induce_weight(HermitianFamily.constant(np.eye(2)), grid, stencil)
    lhs, rhs = trace_identity(weight, DetBundleWeight.from_function(stencil, lambda s: 1.0))
    assert abs(lhs) < 1e-8 and abs(rhs) < 1e-12
