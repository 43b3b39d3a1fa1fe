#!/usr/bin/env python3
"""
Tests for phase-space weights and the initial-condition builders
"""
import sys

import numpy as np
import pytest

from src.errors import DomainError
from src.fields import SpatialGrid, phase_space_weights
from src.initial_conditions import (
    angular_perturbed_fvm_field, build_initial_condition, fvm_field, perturbed_fvm_field, uniform_field,
)
from src.model import FrequencySpec, FvMState
from src.sphere_calculus import AngularGrid, Direction

NU = FrequencySpec.constant(1.0)


def test_phase_space_weights_cover_the_domain():
    sgrid, agrid = SpatialGrid(2, 4, 2.0), AngularGrid.circle(8)
    weights = np.broadcast_to(phase_space_weights(sgrid, agrid), sgrid.shape + (agrid.n_nodes,))
    assert weights.sum() == pytest.approx(4.0 * 2 * np.pi)


def test_uniform_field():
    sgrid, agrid = SpatialGrid(1, 8), AngularGrid.circle(16)
    f = uniform_field(sgrid, agrid, rho=2.0)
    np.testing.assert_allclose(f.values, 2.0 / (2 * np.pi))
    assert f.mass == pytest.approx(2.0)
    with pytest.raises(DomainError):
        uniform_field(sgrid, agrid, rho=0.0)


def test_perturbed_field_keeps_mass():
    sgrid, agrid = SpatialGrid(1, 16), AngularGrid.circle(32)
    state = FvMState(1.0, Direction.from_angle(0.0), 0.5)
    f = perturbed_fvm_field(sgrid, agrid, state, NU, (0.2, 0.1))
    assert f.mass == pytest.approx(1.0, abs=1e-12)
    density = f.spatial_density
    assert density.max() == pytest.approx(density[0], rel=1e-12)
    with pytest.raises(DomainError):
        perturbed_fvm_field(sgrid, agrid, state, NU, (0.6, 0.5))


def test_angular_perturbation_keeps_cell_mass():
    sgrid, agrid = SpatialGrid(1, 4), AngularGrid.circle(64)
    state = FvMState(1.5, Direction.from_angle(1.0), 0.5)
    f = angular_perturbed_fvm_field(sgrid, agrid, state, NU, (0.3,))
    np.testing.assert_allclose(f.values @ agrid.weights, 1.5, atol=1e-12)
    unperturbed = fvm_field(sgrid, agrid, state, NU)
    assert not np.allclose(f.values, unperturbed.values)
    with pytest.raises(DomainError):
        angular_perturbed_fvm_field(sgrid, agrid, state, NU, (1.0,))


def test_build_initial_condition_dispatch():
    sgrid, agrid = SpatialGrid(1, 8), AngularGrid.circle(16)
    kwargs = dict(rho=1.0, angle=0.4, mu=0.5, nu=NU, modes=(0.1,))
    state = FvMState(1.0, Direction.from_angle(0.4), 0.5)
    np.testing.assert_array_equal(build_initial_condition("uniform", sgrid, agrid, **kwargs).values,
                                  uniform_field(sgrid, agrid).values)
    np.testing.assert_array_equal(build_initial_condition("fvm", sgrid, agrid, **kwargs).values,
                                  fvm_field(sgrid, agrid, state, NU).values)
    perturbed = build_initial_condition("angular_perturbed_fvm", sgrid, agrid, **kwargs)
    assert perturbed.mass == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        build_initial_condition("file", sgrid, agrid, **kwargs)
    with pytest.raises(DomainError):
        build_initial_condition("vortex", sgrid, agrid, **kwargs)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
