#!/usr/bin/env python3
"""
Tests for the interaction frequency, kernels, flux/director and equilibria
"""
import sys

import numpy as np
import pytest
from scipy.special import ive

import config
from src.errors import AdmissibilityError, DomainError, GridMismatchError
from src.fields import DistributionField, SpatialGrid
from src.kinetic_solver import collision_rhs
from src.model import (
    FrequencySpec, FvMState, KernelSpec, MomentField, bessel_order, c_of_mu, c_of_mu_circle,
    director_eps, flux_J, force_coefficients, fvm_density, fvm_on_grid, growth_constant,
    langevin_order, sample_fvm, sigma, symmetric_collision_operator,
)
from src.sphere_calculus import AngularGrid, Direction, angular_divergence, integrate_sphere

FAMILIES = {
    "constant": FrequencySpec.constant(1.0),
    "affine": FrequencySpec.affine(1.0, 0.5),
    "tabulated": FrequencySpec.tabulated(1.0 + 0.3 * np.linspace(-1, 1, 9) + 0.1 * np.linspace(-1, 1, 9) ** 2),
}


# ---------------------------------------------------------------------------
# Frequency and sigma
# ---------------------------------------------------------------------------


def test_sigma_examples():
    assert sigma(FrequencySpec.constant(1.0), 0.5) == pytest.approx(0.5)
    assert sigma(FrequencySpec.constant(2.0), -1.0) == pytest.approx(-2.0)
    assert sigma(FrequencySpec.affine(1.0, 0.5), 1.0) == pytest.approx(1.25)
    assert sigma(FAMILIES["tabulated"], 0.0) == pytest.approx(0.0, abs=1e-15)


def test_sigma_outside_domain():
    with pytest.raises(DomainError):
        sigma(FrequencySpec.constant(1.0), 1.5)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_sigma_derivative_is_nu(name):
    spec = FAMILIES[name]
    c = np.linspace(-1.0, 1.0, 101)
    h = config.SIGMA_FD_STEP
    derivative = (spec.sigma_unchecked(c + h) - spec.sigma_unchecked(c - h)) / (2 * h)
    np.testing.assert_allclose(derivative, spec.nu(c), atol=1e-8)


@pytest.mark.parametrize("a, b", [(0.5, 1.0), (1.0, -1.0), (0.0, 0.0)])
def test_affine_needs_positive_frequency(a, b):
    with pytest.raises(DomainError):
        FrequencySpec.affine(a, b)


def test_frequency_validation():
    with pytest.raises(DomainError):
        FrequencySpec.constant(-1.0)
    with pytest.raises(DomainError):
        FrequencySpec.tabulated([1.0, 2.0, 3.0])
    with pytest.raises(DomainError):
        FrequencySpec.tabulated([1.0, 0.0, 1.0, 1.0])
    assert FrequencySpec.constant(0.0).is_zero


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_frequency_dict_round_trip(name):
    spec = FAMILIES[name]
    again = FrequencySpec.from_dict(spec.to_dict())
    c = np.linspace(-1, 1, 7)
    np.testing.assert_array_equal(again.nu(c), spec.nu(c))


def test_growth_constant():
    assert growth_constant(FrequencySpec.constant(1.0), dim=2) == pytest.approx(2.0)
    assert growth_constant(FrequencySpec.constant(1.0), dim=3) == pytest.approx(3.0)
    assert growth_constant(FrequencySpec.affine(1.0, 0.5), dim=2) == pytest.approx(0.5 + 1.5 + 1.5)


# ---------------------------------------------------------------------------
# Equilibria
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("mu", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("dim", [2, 3])
def test_fvm_normalisation(mu, dim):
    grid = AngularGrid.for_dimension(dim)
    director = Direction.from_angle(0.4) if dim == 2 else Direction.from_spherical(0.7, 0.3)
    state = FvMState(1.0, director, mu)
    profile = fvm_on_grid(state, FrequencySpec.constant(1.0), grid)
    assert integrate_sphere(profile, grid) == pytest.approx(1.0, abs=1e-8)
    assert np.all(profile > 0)


def test_fvm_peaks_at_director():
    grid = AngularGrid.circle(64)
    state = FvMState(2.0, Direction.from_angle(grid.theta[10]), 0.3)
    profile = fvm_on_grid(state, FrequencySpec.constant(1.0), grid)
    assert int(np.argmax(profile)) == 10
    assert fvm_density(state, grid.nodes[10], FrequencySpec.constant(1.0), grid) == pytest.approx(profile[10])


def test_fvm_flattens_for_large_noise():
    grid = AngularGrid.circle(64)
    state = FvMState(1.0, Direction.from_angle(0.0), 1e3)
    profile = fvm_on_grid(state, FrequencySpec.constant(1.0), grid)
    np.testing.assert_allclose(profile, 1.0 / (2 * np.pi), atol=1e-3)


def test_fvm_state_validation():
    with pytest.raises(DomainError):
        FvMState(1.0, Direction.from_angle(0.0), 0.0)
    with pytest.raises(DomainError):
        FvMState(0.0, Direction.from_angle(0.0), 1.0)


@pytest.mark.parametrize("mu", [0.1, 0.2, 0.5, 1.0, 2.0, 10.0])
def test_order_parameter_matches_langevin(mu):
    assert c_of_mu(mu, FrequencySpec.constant(1.0)) == pytest.approx(1.0 / np.tanh(1.0 / mu) - mu, abs=1e-8)
    assert langevin_order(mu) == pytest.approx(1.0 / np.tanh(1.0 / mu) - mu, abs=1e-12)


def test_order_parameter_limits():
    nu = FrequencySpec.constant(1.0)
    assert c_of_mu(1e-3, nu) > 0.998
    assert c_of_mu(1e3, nu) < 0.002
    with pytest.raises(DomainError):
        c_of_mu(0.0, nu)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_order_parameter_decreases_with_noise(name):
    values = [c_of_mu(mu, FAMILIES[name]) for mu in np.logspace(-2, 2, 20)]
    assert np.all(np.diff(values) < 0)
    values = [c_of_mu_circle(mu, FAMILIES[name]) for mu in np.logspace(-1, 2, 12)]
    assert np.all(np.diff(values) < 0)


@pytest.mark.parametrize("mu", [0.1, 0.5, 1.0, 5.0])
def test_circle_order_parameter_matches_bessel(mu):
    nu = FrequencySpec.constant(1.0)
    expected = ive(1, 1.0 / mu) / ive(0, 1.0 / mu)
    assert c_of_mu_circle(mu, nu) == pytest.approx(expected, abs=1e-10)
    assert bessel_order(mu) == pytest.approx(expected, abs=1e-14)


# ---------------------------------------------------------------------------
# Kernel, flux and director
# ---------------------------------------------------------------------------


def _random_field(sgrid, agrid, seed=0):
    rng = np.random.default_rng(seed)
    return DistributionField(rng.random(sgrid.shape + (agrid.n_nodes,)), sgrid, agrid)


def test_dirac_kernel_is_identity():
    sgrid = SpatialGrid(1, 8)
    kernel = KernelSpec.build("dirac", sgrid)
    assert kernel.is_identity
    values = np.random.default_rng(1).random((8, 2))
    np.testing.assert_array_equal(kernel.convolve(values), values)


@pytest.mark.parametrize("family", ["gaussian", "tophat"])
@pytest.mark.parametrize("dim", [1, 2])
def test_smooth_kernels_have_unit_mass(family, dim):
    sgrid = SpatialGrid(dim, 16)
    kernel = KernelSpec.build(family, sgrid, 0.15)
    assert kernel.l1_norm == pytest.approx(1.0, abs=1e-12)
    assert np.all(kernel.samples >= 0)
    # isotropic: symmetric under x -> -x
    flipped = np.roll(np.flip(kernel.samples, axis=0), 1, axis=0)
    np.testing.assert_allclose(flipped, kernel.samples, atol=1e-15)
    # convolving a constant returns the constant
    np.testing.assert_allclose(kernel.convolve(np.full(sgrid.shape + (2,), 3.0)), 3.0, atol=1e-12)


def test_kernel_validation():
    sgrid = SpatialGrid(1, 8)
    with pytest.raises(DomainError):
        KernelSpec.build("gaussian", sgrid, 0.0)
    with pytest.raises(DomainError):
        KernelSpec.build("cauchy", sgrid, 0.1)


@pytest.mark.parametrize("family, width", [("dirac", 0.0), ("gaussian", 0.1)])
@pytest.mark.parametrize("n_theta", [16, 32, 50])
def test_flux_of_uniform_field_is_exactly_zero(family, width, n_theta):
    sgrid, agrid = SpatialGrid(1, 8), AngularGrid.circle(n_theta)
    f = DistributionField(np.full((8, n_theta), 0.7), sgrid, agrid)
    J = flux_J(f, KernelSpec.build(family, sgrid, width))
    assert np.all(J.flux == 0.0)
    assert np.all(director_eps(J, 1e-6).director == 0.0)


def test_small_flux_survives():
    sgrid, agrid = SpatialGrid(1, 4), AngularGrid.circle(32)
    values = 0.7 * (1.0 + 1e-9 * np.cos(agrid.theta))
    f = DistributionField(np.broadcast_to(values, (4, 32)), sgrid, agrid)
    J = flux_J(f, KernelSpec.build("dirac", sgrid))
    np.testing.assert_allclose(J.flux[:, 0], 0.7 * 1e-9 * np.pi, rtol=1e-6)


def test_flux_is_linear():
    sgrid, agrid = SpatialGrid(1, 8), AngularGrid.circle(16)
    kernel = KernelSpec.build("gaussian", sgrid, 0.1)
    f, g = _random_field(sgrid, agrid, 1), _random_field(sgrid, agrid, 2)
    combined = DistributionField(2.0 * f.values - 0.5 * g.values, sgrid, agrid)
    expected = 2.0 * flux_J(f, kernel).flux - 0.5 * flux_J(g, kernel).flux
    np.testing.assert_allclose(flux_J(combined, kernel).flux, expected, atol=1e-13)


def test_flux_bounded_by_density():
    sgrid, agrid = SpatialGrid(2, 8), AngularGrid.circle(16)
    kernel = KernelSpec.build("gaussian", sgrid, 0.2)
    f = _random_field(sgrid, agrid, 4)
    bound = kernel.l1_norm * np.max(f.spatial_density)
    assert flux_J(f, kernel).speed.max() <= bound * (1 + 1e-12)


def test_flux_of_equilibrium_on_sphere():
    sgrid, agrid = SpatialGrid(1, 2), AngularGrid.sphere()
    director = Direction.from_spherical(0.7, 0.3)
    nu = FrequencySpec.constant(1.0)
    profile = fvm_on_grid(FvMState(1.5, director, 0.5), nu, agrid)
    f = DistributionField(np.broadcast_to(profile, (2, agrid.n_nodes)), sgrid, agrid)
    J = flux_J(f, KernelSpec.build("dirac", sgrid))
    expected = 1.5 * c_of_mu(0.5, nu) * director.components
    np.testing.assert_allclose(J.flux, np.broadcast_to(expected, (2, 3)), atol=1e-6)


def test_flux_rejects_foreign_kernel():
    f = _random_field(SpatialGrid(1, 8), AngularGrid.circle(16))
    with pytest.raises(GridMismatchError):
        flux_J(f, KernelSpec.build("dirac", SpatialGrid(1, 16)))


def test_director_examples():
    J = MomentField(np.array([[3.0, 4.0], [0.0, 0.0]]))
    regularised = director_eps(J, 1.0)
    np.testing.assert_allclose(regularised.director, [[0.5, 2.0 / 3.0], [0.0, 0.0]])
    assert np.all(np.linalg.norm(regularised.director, axis=-1) < 1.0)
    np.testing.assert_allclose(director_eps(MomentField(np.array([[3.0, 4.0]])), 0.0).director, [[0.6, 0.8]])


def test_director_without_regularisation_needs_flux():
    J = MomentField(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]]))
    with pytest.raises(AdmissibilityError) as excinfo:
        director_eps(J, 0.0)
    assert excinfo.value.cell == (1,)
    with pytest.raises(DomainError):
        director_eps(J, -1.0)


def test_admissibility_class():
    J = MomentField(np.array([[0.3, 0.0], [0.0, 0.05]]))
    assert J.min_speed == pytest.approx(0.05)
    assert J.weakest_cell() == (1,)
    assert not J.admissible(0.1)
    assert J.admissible(0.01)


# ---------------------------------------------------------------------------
# Force coefficients
# ---------------------------------------------------------------------------


def test_force_coefficients_vanish_without_director():
    grid = AngularGrid.circle(32)
    psi1, psi2, psi3 = force_coefficients(np.zeros(2), FrequencySpec.affine(1.0, 0.5), grid)
    np.testing.assert_allclose(psi1.values, 0.0)
    np.testing.assert_allclose(psi2, 0.0)
    np.testing.assert_allclose(psi3, 0.0)


def test_force_coefficients_examples():
    grid = AngularGrid.circle(32)
    psi1, psi2, psi3 = force_coefficients(np.array([1.0, 0.0]), FrequencySpec.constant(1.0), grid)
    np.testing.assert_allclose(psi2, 0.0)
    quarter = 8  # theta = pi / 2
    np.testing.assert_allclose(psi1.values[quarter], [1.0, 0.0], atol=1e-15)
    assert psi3[quarter] == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(psi3[0], -1.0)
    assert psi1.normal_residual() < 1e-14


def test_force_coefficients_reject_long_director():
    with pytest.raises(DomainError):
        force_coefficients(np.array([1.0, 0.5]), FrequencySpec.constant(1.0), AngularGrid.circle(16))


@pytest.mark.parametrize("nu", [FrequencySpec.constant(1.3), FrequencySpec.affine(1.0, 0.5)])
def test_divergence_of_force_matches_coefficients(nu):
    grid = AngularGrid.circle(64)
    Omega = 0.8 * Direction.from_angle(1.1).components
    psi1, psi2, psi3 = force_coefficients(Omega, nu, grid)
    np.testing.assert_allclose(angular_divergence(psi1), psi2 + psi3, atol=1e-10)


def test_force_coefficients_broadcast_over_cells():
    grid = AngularGrid.circle(16)
    directors = np.array([[0.5, 0.0], [0.0, -0.9], [0.0, 0.0]])
    psi1, psi2, psi3 = force_coefficients(directors, FrequencySpec.affine(1.0, 0.5), grid)
    assert psi1.values.shape == (3, 16, 2)
    assert psi2.shape == psi3.shape == (3, 16)
    single = force_coefficients(directors[1], FrequencySpec.affine(1.0, 0.5), grid)
    np.testing.assert_allclose(psi2[1], single.psi2)


# ---------------------------------------------------------------------------
# Collision operator in equilibrium form / sampling
# ---------------------------------------------------------------------------


def test_collision_operator_vanishes_on_equilibrium():
    grid = AngularGrid.circle(64)
    nu = FrequencySpec.constant(1.0)
    director = Direction.from_angle(0.3)
    profile = fvm_on_grid(FvMState(1.0, director, 0.5), nu, grid)
    residual = symmetric_collision_operator(profile, director, nu, 0.5, grid)
    np.testing.assert_allclose(residual, 0.0, atol=1e-12)


@pytest.mark.parametrize("nu", [FrequencySpec.constant(1.0), FrequencySpec.affine(1.0, 0.3)])
def test_collision_operator_forms_agree(nu):
    grid = AngularGrid.circle(64)
    director = Direction.from_angle(-0.8)
    f = 1.0 + 0.3 * np.cos(grid.theta) + 0.2 * np.sin(2 * grid.theta)
    symmetric = symmetric_collision_operator(f, director, nu, 0.5, grid)
    flux_form = collision_rhs(f, director.components, nu, 0.5, grid)
    np.testing.assert_allclose(symmetric, flux_form, atol=1e-8)


def test_sample_fvm_on_circle():
    state = FvMState(1.0, Direction.from_angle(0.9), 0.5)
    nu = FrequencySpec.constant(1.0)
    samples = sample_fvm(state, nu, 20000, np.random.default_rng(7))
    np.testing.assert_allclose(np.linalg.norm(samples, axis=1), 1.0, atol=1e-12)
    mean_alignment = float(np.mean(samples @ state.director.components))
    assert mean_alignment == pytest.approx(bessel_order(0.5), abs=0.02)


def test_sample_fvm_on_sphere():
    state = FvMState(1.0, Direction.from_spherical(0.4, 2.0), 0.5)
    nu = FrequencySpec.constant(1.0)
    samples = sample_fvm(state, nu, 20000, np.random.default_rng(8))
    np.testing.assert_allclose(np.linalg.norm(samples, axis=1), 1.0, atol=1e-12)
    mean = samples.mean(axis=0)
    np.testing.assert_allclose(mean, c_of_mu(0.5, nu) * state.director.components, atol=0.02)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
