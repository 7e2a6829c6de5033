import math

import numpy as np
import pytest

from models.errors import GeometryError, PositivityError
from projgeom.grid import (
    build_fiber_grid,
    fs_moment,
    fs_moment_closed_form,
    integrate_fiber,
)
from projgeom.spectral import (
    chart_derivatives,
    eigen_project,
    eigenfunction,
    fiber_laplacian,
    project,
    reconstruct,
    sphere_laplacian,
)


def _random_hermitian(rng, r=2):
    a = rng.normal(size=(r, r)) + 1j * rng.normal(size=(r, r))
    return 0.5 * (a + a.conj().T)


def test_fs_mass_is_one(grid):
    assert abs(grid.fs_mass - 1.0) < 1e-12
    assert abs(integrate_fiber(grid, grid.fs_density) - 1.0) < 1e-12


@pytest.mark.parametrize("n, resolution", [(0, (16, 32)), (2, (16, 32)), (1, (2, 32)), (1, (16, 3))])
def test_build_rejects_bad_input(n, resolution):
    with pytest.raises(GeometryError):
        build_fiber_grid(n, resolution)


def test_unsupported_dimension_message():
    with pytest.raises(GeometryError, match="unsupported dimension"):
        build_fiber_grid(3, (16, 32))


def test_no_node_at_infinity(grid):
    assert np.all(np.isfinite(grid.z))
    assert np.all(grid.chart == 0)
    assert len(grid.nodes) == grid.size


@pytest.mark.parametrize("indices", [
    (1, 1), (2, 2), (1, 2), (2, 1),
    (1, 1, 1, 1), (1, 1, 2, 2), (1, 2, 2, 1), (1, 2, 1, 2), (2, 2, 2, 2),
])
def test_fs_moments_match_closed_form(grid, indices):
    assert abs(fs_moment(grid, indices) - fs_moment_closed_form(1, indices)) < 1e-12


def test_fs_moment_index_out_of_range(grid):
    with pytest.raises(GeometryError):
        fs_moment(grid, (1, 3))


def test_integrate_reports_bad_node(grid):
    density = np.ones(grid.shape)
    density[3, 5] = np.nan
    with pytest.raises(GeometryError, match=r"node \(3, 5\)"):
        integrate_fiber(grid, density)


def test_laplacian_first_eigenspace(grid):
    e11 = eigenfunction(grid, 1, 1)
    assert np.max(np.abs(sphere_laplacian(grid, e11) + 2.0 * e11)) < 1e-10
    e12 = eigenfunction(grid, 1, 2)
    assert np.max(np.abs(sphere_laplacian(grid, e12) + 2.0 * e12)) < 1e-10


@pytest.mark.parametrize("shift", [0.5, 2.0, 8.0])
def test_laplacian_ignores_constant_shifts(grid, shift):
    f = eigenfunction(grid, 2, 1).real
    assert np.max(np.abs(sphere_laplacian(grid, np.full(grid.shape, shift)))) < 1e-12
    assert np.max(np.abs(sphere_laplacian(grid, f + shift) - sphere_laplacian(grid, f))) < 1e-11


def test_laplacian_self_adjoint(grid):
    rng = np.random.default_rng(7)
    f = project(grid, rng.normal(size=grid.shape))
    g = project(grid, rng.normal(size=grid.shape))
    area = 4.0 * math.pi * grid.fs_density
    lhs = integrate_fiber(grid, f * sphere_laplacian(grid, g) * area)
    rhs = integrate_fiber(grid, g * sphere_laplacian(grid, f) * area)
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_project_is_idempotent(grid):
    rng = np.random.default_rng(3)
    f = project(grid, rng.normal(size=grid.shape))
    assert np.max(np.abs(project(grid, f) - f)) < 1e-11


def test_chart_derivatives_of_mixed_coordinate_product(grid):
    z = grid.z
    q = 1.0 + np.abs(z) ** 2
    d = chart_derivatives(grid, np.conj(z) / q)
    tol = 1e-9
    assert np.max(np.abs(d.f_zb - q ** -2)) < tol
    assert np.max(np.abs(d.f_z + np.conj(z) ** 2 * q ** -2)) < tol
    assert np.max(np.abs(d.f_zzb + 2.0 * np.conj(z) * q ** -3)) < tol
    assert np.max(np.abs(d.f_zbzb + 2.0 * z * q ** -3)) < tol
    assert np.max(np.abs(d.f_zz - 2.0 * np.conj(z) ** 3 * q ** -3)) < tol


def test_chart_derivatives_of_log_potential(grid):
    z = grid.z
    q = 1.0 + np.abs(z) ** 2
    d = chart_derivatives(grid, 1.0 / q)
    assert np.max(np.abs(d.f_zb + z * q ** -2)) < 1e-9
    assert np.max(np.abs(d.f_zbzb - 2.0 * z ** 2 * q ** -3)) < 1e-9


def test_fiber_laplacian_fubini_study(grid):
    e11 = eigenfunction(grid, 1, 1)
    box = fiber_laplacian(grid, grid.fs_metric, e11)
    assert np.max(np.abs(box - 2.0 * e11)) < 1e-10


def test_fiber_laplacian_rejects_nonpositive_metric(grid):
    g = grid.fs_metric.copy()
    g[4, 7] = -1.0
    with pytest.raises(PositivityError) as info:
        fiber_laplacian(grid, g, np.ones(grid.shape))
    assert info.value.node == (0, 4, 7)
    assert info.value.value == -1.0


def test_eigen_project_constant_and_eigenfunction(grid):
    one = eigen_project(grid, np.ones(grid.shape))
    assert np.allclose(one.coefficients, np.eye(2), atol=1e-12)
    e11 = eigen_project(grid, eigenfunction(grid, 1, 1))
    assert np.allclose(e11.coefficients, np.diag([1.0, -1.0]), atol=1e-12)
    assert e11.residual < 1e-12


def test_eigen_project_recovers_coefficients_in_frame(grid):
    rng = np.random.default_rng(11)
    lam = _random_hermitian(rng)
    frame = np.array([[1.3, 0.2 + 0.4j], [0.0, 0.8]])
    f = reconstruct(grid, lam, frame)
    result = eigen_project(grid, f, frame)
    assert np.allclose(result.coefficients, lam, atol=1e-7)
    assert result.residual < 1e-7


def test_eigenfunction_closed_form_and_mean(grid):
    z = grid.z
    e11 = eigenfunction(grid, 1, 1)
    assert np.max(np.abs(e11 - (1 - np.abs(z) ** 2) / (1 + np.abs(z) ** 2))) < 1e-14
    for alpha in (1, 2):
        for beta in (1, 2):
            e = eigenfunction(grid, alpha, beta)
            assert abs(integrate_fiber(grid, e * grid.fs_density)) < 1e-12


def test_fiber_laplacian_scales_inversely_with_metric(grid):
    e11 = eigenfunction(grid, 1, 1)
    box = fiber_laplacian(grid, 2.0 * grid.fs_metric, e11)
    assert np.max(np.abs(box - e11)) < 1e-10
    assert np.max(np.abs(fiber_laplacian(grid, grid.fs_metric, np.ones(grid.shape)))) < 1e-10


def test_odd_eigenfunction_integrates_to_zero(grid):
    q = 1.0 + grid.abs_z_sq
    density = grid.fs_density * (1.0 - grid.abs_z_sq) / q
    assert abs(integrate_fiber(grid, density)) < 1e-13


def test_coarse_grid_fs_mass():
    grid = build_fiber_grid(1, (8, 16))
    assert abs(grid.fs_mass - 1.0) < 1e-6
