#!/usr/bin/env python3
"""
Tests for the projection algebra, spectral angular operators and quadrature
"""
import sys

import numpy as np
import pytest

from src.errors import DomainError, GridMismatchError
from src.sphere_calculus import (
    AngularGrid, Direction, TangentField, angular_divergence, angular_gradient, integrate_sphere,
    laplace_beltrami, project_tangent, spectral_derivative,
)


def _smooth(theta, rng, degree=5):
    """Random trigonometric polynomial of the given degree"""
    a, b = rng.standard_normal(degree + 1), rng.standard_normal(degree + 1)
    return sum(a[k] * np.cos(k * theta) + b[k] * np.sin(k * theta) for k in range(degree + 1))


# ---------------------------------------------------------------------------
# Direction / AngularGrid
# ---------------------------------------------------------------------------


def test_direction_normalisation():
    d = Direction.from_vector([3.0, 4.0])
    assert d.dim == 2
    np.testing.assert_allclose(d.components, [0.6, 0.8], atol=1e-15)
    assert Direction.from_angle(np.pi / 2).angle == pytest.approx(np.pi / 2)


def test_direction_rejects_bad_input():
    with pytest.raises(DomainError):
        Direction(np.array([1.0, 0.1]))
    with pytest.raises(DomainError):
        Direction(np.array([1.0, 0.0, 0.0, 0.0]))
    with pytest.raises(DomainError):
        Direction.from_vector([0.0, 0.0])


def test_direction_is_immutable():
    d = Direction.from_angle(0.3)
    with pytest.raises(ValueError):
        d.components[0] = 2.0


@pytest.mark.parametrize("n_theta", [4, 16, 64, 1024])
def test_circle_grid_weights(n_theta):
    grid = AngularGrid.circle(n_theta)
    assert grid.weights.sum() == pytest.approx(2 * np.pi, abs=1e-12)
    np.testing.assert_allclose(grid.theta, 2 * np.pi * np.arange(n_theta) / n_theta)
    np.testing.assert_allclose(np.linalg.norm(grid.nodes, axis=1), 1.0, atol=1e-15)


def test_sphere_grid_weights():
    grid = AngularGrid.sphere()
    assert grid.dim == 3
    assert grid.weights.sum() == pytest.approx(4 * np.pi, abs=1e-12)
    assert np.all(grid.weights > 0)
    np.testing.assert_allclose(np.linalg.norm(grid.nodes, axis=1), 1.0, atol=1e-14)


def test_circle_grid_rejects_odd_count():
    with pytest.raises(DomainError):
        AngularGrid.circle(15)


# ---------------------------------------------------------------------------
# project_tangent
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("omega, v, expected", [
    ((1.0, 0.0), (1.0, 0.0), (0.0, 0.0)),
    ((1.0, 0.0), (0.0, 1.0), (0.0, 1.0)),
    ((0.0, 1.0), (3.0, 4.0), (3.0, 0.0)),
])
def test_project_tangent_examples(omega, v, expected):
    np.testing.assert_allclose(project_tangent(Direction(np.array(omega)), v), expected, atol=1e-15)


def test_project_tangent_is_idempotent_and_orthogonal():
    rng = np.random.default_rng(3)
    omega = Direction.from_vector(rng.standard_normal(3))
    v = rng.standard_normal(3)
    once = project_tangent(omega, v)
    assert abs(once @ omega.components) < 1e-14
    np.testing.assert_allclose(project_tangent(omega, once), once, atol=1e-15)


def test_project_tangent_rejects_non_unit():
    with pytest.raises(DomainError):
        project_tangent(np.array([2.0, 0.0]), np.array([1.0, 1.0]))


# ---------------------------------------------------------------------------
# Gradient / divergence / Laplace-Beltrami
# ---------------------------------------------------------------------------


def test_gradient_of_constant_vanishes():
    grid = AngularGrid.circle(64)
    gradient = angular_gradient(np.full(64, 2.5), grid)
    np.testing.assert_allclose(gradient.values, 0.0, atol=1e-13)


def test_gradient_of_linear_function_is_projection():
    grid = AngularGrid.circle(64)
    v = np.array([1.0, 0.0])
    gradient = angular_gradient(grid.nodes @ v, grid)
    expected = np.array([project_tangent(node, v) for node in grid.nodes])
    np.testing.assert_allclose(gradient.values, expected, atol=1e-12)
    assert gradient.normal_residual() < 1e-12


def test_spectral_derivative_of_sine():
    grid = AngularGrid.circle(64)
    np.testing.assert_allclose(spectral_derivative(np.sin(grid.theta), grid), np.cos(grid.theta), atol=1e-12)


def test_gradient_only_on_circle():
    grid = AngularGrid.sphere(8, 8)
    with pytest.raises(DomainError):
        angular_gradient(np.ones(grid.n_nodes), grid)


def test_gradient_rejects_wrong_size_and_nan():
    grid = AngularGrid.circle(16)
    with pytest.raises(GridMismatchError):
        angular_gradient(np.ones(8), grid)
    values = np.ones(16)
    values[3] = np.nan
    with pytest.raises(DomainError):
        angular_gradient(values, grid)


def test_divergence_of_projected_constant():
    grid = AngularGrid.circle(64)
    v = np.array([1.0, 0.0])
    field = TangentField.from_ambient(grid, np.broadcast_to(v, grid.nodes.shape))
    np.testing.assert_allclose(angular_divergence(field), -np.cos(grid.theta), atol=1e-12)


def test_divergence_of_zero_field():
    grid = AngularGrid.circle(32)
    field = TangentField(grid, np.zeros((32, 2)))
    np.testing.assert_allclose(angular_divergence(field), 0.0, atol=1e-15)


def test_divergence_rejects_radial_field():
    grid = AngularGrid.circle(32)
    with pytest.raises(DomainError):
        angular_divergence(TangentField(grid, np.array(grid.nodes)))


def test_integration_by_parts_identity():
    grid = AngularGrid.circle(64)
    rng = np.random.default_rng(11)
    f = _smooth(grid.theta, rng)
    g = _smooth(grid.theta, rng)
    field = TangentField(grid, g[:, None] * grid.tangents)
    gradient = angular_gradient(f, grid).values
    lhs = integrate_sphere(f * angular_divergence(field), grid)
    rhs = integrate_sphere(np.einsum("nd,nd->n", field.values, gradient - 2 * grid.nodes * f[:, None]), grid)
    assert abs(lhs + rhs) < 1e-10


@pytest.mark.parametrize("k", [0, 1, 3, 10])
def test_laplace_beltrami_eigenfunctions(k):
    grid = AngularGrid.circle(64)
    f = np.cos(k * grid.theta)
    np.testing.assert_allclose(laplace_beltrami(f, grid), -k ** 2 * f, atol=1e-10)


def test_laplace_beltrami_is_divergence_of_gradient():
    grid = AngularGrid.circle(64)
    f = _smooth(grid.theta, np.random.default_rng(5), degree=8)
    composed = angular_divergence(angular_gradient(f, grid))
    np.testing.assert_allclose(laplace_beltrami(f, grid), composed, atol=1e-10)


def test_operators_carry_leading_axes():
    grid = AngularGrid.circle(32)
    batch = np.stack([np.cos(grid.theta), np.sin(2 * grid.theta)])
    result = laplace_beltrami(batch, grid)
    np.testing.assert_allclose(result[0], -np.cos(grid.theta), atol=1e-11)
    np.testing.assert_allclose(result[1], -4 * np.sin(2 * grid.theta), atol=1e-11)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def test_integrate_constants():
    assert integrate_sphere(np.ones(64), AngularGrid.circle(64)) == pytest.approx(2 * np.pi, abs=1e-12)
    sphere = AngularGrid.sphere()
    assert integrate_sphere(np.ones(sphere.n_nodes), sphere) == pytest.approx(4 * np.pi, abs=1e-12)


def test_integrate_cos_squared():
    grid = AngularGrid.circle(64)
    assert integrate_sphere(np.cos(grid.theta) ** 2, grid) == pytest.approx(np.pi, abs=1e-12)


def test_sphere_quadrature_second_moment():
    grid = AngularGrid.sphere()
    assert integrate_sphere(grid.nodes[:, 2] ** 2, grid) == pytest.approx(4 * np.pi / 3, abs=1e-12)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
