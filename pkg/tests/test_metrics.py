import numpy as np
import pytest

from metrics.stencil import BaseStencil, richardson
from metrics.weights import (
    HermitianFamily,
    WeightField,
    apply_perturbations,
    fiber_metric,
    induce_weight,
    isometry_defect,
    opposite_chart_metric,
    perturbation_field,
    random_perturbation,
)
from models.config import PerturbationConfig
from models.errors import GeometryError, PositivityError
from projgeom.spectral import eigenfunction


@pytest.fixture(scope="module")
def stencil():
    return BaseStencil(h=1e-2)


@pytest.fixture(scope="module")
def model_weight(grid, stencil):
    return induce_weight(HermitianFamily.exp_quadratic(), grid, stencil)


def test_stencil_derivatives_of_polynomials(stencil):
    s = stencil.points
    assert abs(stencil.d_s(s) - 1.0) < 1e-12
    assert abs(stencil.d_s(np.conj(s))) < 1e-12
    assert abs(stencil.d_sb(np.conj(s)) - 1.0) < 1e-12
    assert abs(stencil.d_ssb(np.abs(s) ** 2) - 1.0) < 1e-9
    assert abs(stencil.d_ssb(np.real(s ** 2))) < 1e-9


def test_richardson_removes_second_order_error():
    fine_h, coarse_h = 0.05, 0.1
    exact = 1.0
    fine = exact + 0.3 * fine_h ** 2
    coarse = exact + 0.3 * coarse_h ** 2
    assert abs(richardson(fine, coarse) - exact) < 1e-14


def test_stencil_rejects_nonpositive_step():
    with pytest.raises(GeometryError):
        BaseStencil(h=0.0)


def test_induce_identity_gives_fubini_study(grid, stencil):
    weight = induce_weight(HermitianFamily.constant(np.eye(2)), grid, stencil)
    expected = np.log1p(grid.abs_z_sq)
    assert np.max(np.abs(weight.fiber() - expected)) < 1e-13


def test_induce_model_family(model_weight, grid, stencil):
    s_sq = np.abs(stencil.points) ** 2
    expected = s_sq[:, :, None, None] + np.log1p(grid.abs_z_sq)[None, None]
    assert np.max(np.abs(model_weight.values - expected)) < 1e-12


def test_induce_diagonal_family(grid, stencil):
    a, b = 2.0, 0.5
    weight = induce_weight(HermitianFamily.constant(np.diag([a, b])), grid, stencil)
    expected = np.log(1.0 / a + grid.abs_z_sq / b)
    assert np.max(np.abs(weight.fiber() - expected)) < 1e-12


def test_family_rejects_non_positive_matrix():
    with pytest.raises(GeometryError):
        HermitianFamily.constant(np.diag([1.0, -1.0]))


def test_fiber_metric_fubini_study(grid, stencil):
    fs = WeightField.fubini_study(grid, stencil, k=1)
    assert np.max(np.abs(fiber_metric(fs).scalar / grid.fs_metric - 1.0)) < 1e-12
    fs2 = WeightField.fubini_study(grid, stencil, k=2)
    assert np.max(np.abs(fiber_metric(fs2).scalar / grid.fs_metric - 2.0)) < 1e-12


def test_fiber_metric_model_family_center(model_weight, grid):
    metric = fiber_metric(model_weight)
    assert np.max(np.abs(metric.scalar / grid.fs_metric - 1.0)) < 1e-12
    assert np.allclose(metric.g[0, 0] * metric.g_inv[0, 0], 1.0, atol=1e-12)


def test_fiber_metric_positivity_failure(grid, stencil):
    fs = WeightField.fubini_study(grid, stencil, k=1)
    bad = fs.perturbed(np.broadcast_to(eigenfunction(grid, 1, 1), fs.values.shape))
    with pytest.raises(PositivityError) as info:
        fiber_metric(bad)
    assert info.value.value < 0.0
    assert info.value.node[0] == 0


@pytest.mark.parametrize("family", [
    HermitianFamily.exp_quadratic(),
    HermitianFamily.exp_quadratic(exponent=np.diag([1.0, 2.0])),
    HermitianFamily.congruence(matrix=[[2.0, 0.3j], [-0.3j, 1.0]],
                               exponent=np.diag([1.0, 2.0]), shear=[[0.2, 0.1], [0.0, -0.3]]),
])
def test_isometry_defect_vanishes_for_induced(family, grid, stencil):
    weight = induce_weight(family, grid, stencil)
    assert isometry_defect(weight).worst < 1e-8


def test_model_family_det_weight(model_weight, stencil):
    gamma = isometry_defect(model_weight).gamma
    assert abs(gamma[1, 1]) < 1e-12
    assert abs(stencil.d_ssb(gamma) - 2.0) < 1e-8


def test_isometry_detector_fires(model_weight, grid, stencil):
    term = PerturbationConfig(kind='re_z_frac_sq', amplitude=0.1)
    perturbed = model_weight.perturbed(perturbation_field(grid, stencil, term))
    assert isometry_defect(perturbed).center > 1e-3


@pytest.mark.parametrize("shift", [0.0, 0.7, 3.0, 8.0])
def test_isometry_defect_ignores_base_shifts(model_weight, stencil, shift):
    # 常数平移和随 s 变化的平移都只改变底空间部分
    before = isometry_defect(model_weight).defect
    for alpha in (shift, np.abs(stencil.points) ** 2 * 3.0 + shift):
        after = isometry_defect(model_weight.shifted(alpha)).defect
        assert np.allclose(before, after, rtol=0, atol=1e-11)


def test_scaling_hermitian_form_shifts_weight(grid, stencil):
    family = HermitianFamily.exp_quadratic(exponent=np.diag([1.0, 2.0]))
    weight = induce_weight(family, grid, stencil)
    scaled = induce_weight(family.scaled(3.0), grid, stencil)
    assert np.max(np.abs(scaled.values - (weight.values - np.log(3.0)))) < 1e-12
    assert np.max(np.abs(fiber_metric(scaled).scalar - fiber_metric(weight).scalar)) < 1e-10


def test_chart_covariance(model_weight, grid, stencil):
    term = PerturbationConfig(kind='eigen', amplitude=0.1, alpha=1, beta=2)
    weight = model_weight.perturbed(perturbation_field(grid, stencil, term))
    g = fiber_metric(weight).scalar
    pulled = opposite_chart_metric(weight)
    assert np.max(np.abs(pulled / g - 1.0)) < 1e-8


def test_random_perturbation_is_seeded_and_positive(model_weight):
    first = random_perturbation(model_weight, np.random.default_rng(5), count=4, amplitude=2.0)
    second = random_perturbation(model_weight, np.random.default_rng(5), count=4, amplitude=2.0)
    assert np.array_equal(first, second)
    fiber_metric(model_weight.perturbed(first))


def test_apply_perturbations_with_base_factor(model_weight, stencil):
    terms = [PerturbationConfig(kind='re_z_sq', amplitude=0.05, base=True)]
    weight = apply_perturbations(model_weight, terms)
    assert np.array_equal(weight.values[1, 1], model_weight.values[1, 1])
    assert not np.array_equal(weight.values[0, 1], model_weight.values[0, 1])


def test_weight_snapshot_restores_values(model_weight):
    restored = WeightField.from_dict(model_weight.to_dict())
    assert restored.k == model_weight.k
    assert restored.stencil == model_weight.stencil
    assert np.max(np.abs(restored.values - model_weight.values)) < 1e-12
    assert np.max(np.abs(restored.reduced - model_weight.reduced)) < 1e-12


def _quadratic_family():
    def generator(s):
        u, v = s.real, s.imag
        return np.array([[2.0 + u + u * v, 0.3j * v + 0.1 * u * u],
                         [-0.3j * v + 0.1 * u * u, 1.0 + v * v]])
    return HermitianFamily(generator, 2, 'quadratic')


def test_family_from_samples_reproduces_nodes(stencil):
    family = HermitianFamily.exp_quadratic(matrix=[[2.0, 0.5j], [-0.5j, 1.0]])
    samples = family.sample(stencil)
    rebuilt = HermitianFamily.from_samples(stencil, samples)
    assert rebuilt.label == 'samples'
    assert np.allclose(rebuilt.sample(stencil), samples, rtol=0, atol=1e-14)


def test_family_from_samples_is_exact_for_quadratics(stencil):
    family = _quadratic_family()
    rebuilt = HermitianFamily.from_samples(stencil, family.sample(stencil))
    for s in (0.004 + 0.007j, -0.009 + 0.002j, 0.015 - 0.012j):
        assert np.allclose(rebuilt(s), family(s), rtol=0, atol=1e-12)


def test_family_from_samples_rejects_bad_shape(stencil):
    with pytest.raises(GeometryError):
        HermitianFamily.from_samples(stencil, np.zeros((3, 2, 2, 2)))
    with pytest.raises(GeometryError):
        HermitianFamily.from_samples(stencil, np.zeros((3, 3, 2, 3)))
