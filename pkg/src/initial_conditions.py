"""
Initial-condition builders for the kinetic solver
"""
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from src.errors import DomainError, GridMismatchError
from src.fields import DistributionField, SpatialGrid
from src.model import FrequencySpec, FvMState, fvm_on_grid
from src.sphere_calculus import AngularGrid, Direction
from src.utils import setup_logger

logger = setup_logger(__name__)

IC_RECIPES = ("uniform", "fvm", "perturbed_fvm", "angular_perturbed_fvm", "file")


def uniform_field(sgrid: SpatialGrid, agrid: AngularGrid, rho: float = 1.0) -> DistributionField:
    """f = rho / |S^{d-1}|: spatial density rho, no preferred direction"""
    if not rho > 0:
        raise DomainError(f"density must be positive, got {rho}")
    values = np.full(sgrid.shape + (agrid.n_nodes,), rho / agrid.measure)
    return DistributionField(values, sgrid, agrid)


def fvm_field(sgrid: SpatialGrid, agrid: AngularGrid, state: FvMState,
              nu: FrequencySpec) -> DistributionField:
    """Space-homogeneous equilibrium rho M_Omega in every cell"""
    profile = fvm_on_grid(state, nu, agrid)
    values = np.broadcast_to(profile, sgrid.shape + (agrid.n_nodes,))
    return DistributionField(values, sgrid, agrid)


def perturbed_fvm_field(sgrid: SpatialGrid, agrid: AngularGrid, state: FvMState,
                        nu: FrequencySpec, modes: Sequence[float]) -> DistributionField:
    """(1 + sum_k a_k cos(2 pi k x_1 / L)) rho M_Omega, k = 1, 2, ...

    The modulation runs along the first spatial axis.
    """
    modes = np.asarray(modes, dtype=float)
    if np.sum(np.abs(modes)) >= 1.0:
        raise DomainError(f"mode amplitudes {modes.tolist()} would make the density non-positive")
    x = sgrid.centers()[..., 0]
    modulation = np.ones(sgrid.shape)
    for k, amplitude in enumerate(modes, start=1):
        modulation += amplitude * np.cos(2.0 * np.pi * k * x / sgrid.length)
    profile = fvm_on_grid(state, nu, agrid)
    return DistributionField(modulation[..., None] * profile, sgrid, agrid)


def angular_perturbed_fvm_field(sgrid: SpatialGrid, agrid: AngularGrid, state: FvMState,
                                nu: FrequencySpec, modes: Sequence[float]) -> DistributionField:
    """rho M_Omega (1 + sum_k a_k cos(k (theta - theta_Omega))), renormalised to mass rho per cell

    Used to start relaxation runs away from, but near, an equilibrium.
    """
    if not agrid.spectral:
        raise DomainError("angular perturbations need the S^1 grid")
    modes = np.asarray(modes, dtype=float)
    if np.sum(np.abs(modes)) >= 1.0:
        raise DomainError(f"mode amplitudes {modes.tolist()} would make the density non-positive")
    phase = agrid.theta - state.director.angle
    modulation = np.ones(agrid.n_nodes)
    for k, amplitude in enumerate(modes, start=1):
        modulation += amplitude * np.cos(k * phase)
    profile = fvm_on_grid(state, nu, agrid) * modulation
    profile *= state.rho / (profile @ agrid.weights)
    values = np.broadcast_to(profile, sgrid.shape + (agrid.n_nodes,))
    return DistributionField(values, sgrid, agrid)


def field_from_file(path: Union[str, Path], sgrid: SpatialGrid = None,
                    agrid: AngularGrid = None) -> DistributionField:
    """Load a snapshot; when grids are given they must match the stored ones"""
    from src.snapshot_io import load_field

    field = load_field(path)
    if sgrid is not None and field.sgrid != sgrid:
        raise GridMismatchError(f"snapshot {path} has spatial grid {field.sgrid}, expected {sgrid}")
    if agrid is not None and not field.agrid.same_as(agrid):
        raise GridMismatchError(f"snapshot {path} has {field.agrid.n_nodes} angular nodes, "
                                f"expected {agrid.n_nodes}")
    logger.info(f"Loaded initial condition from {path} (t = {field.time})")
    return field


def build_initial_condition(recipe: str, sgrid: SpatialGrid, agrid: AngularGrid, *,
                            rho: float, angle: float, mu: float, nu: FrequencySpec,
                            modes: Sequence[float] = (), path=None) -> DistributionField:
    """Dispatch on a recipe name from IC_RECIPES"""
    if recipe == "uniform":
        return uniform_field(sgrid, agrid, rho)
    if recipe == "file":
        if path is None:
            raise DomainError("the 'file' initial condition needs a path")
        return field_from_file(path, sgrid, agrid)
    if recipe not in IC_RECIPES:
        raise DomainError(f"unknown initial condition {recipe!r}, expected one of {IC_RECIPES}")

    state = FvMState(rho, Direction.from_angle(angle), mu)
    if recipe == "fvm":
        return fvm_field(sgrid, agrid, state, nu)
    if recipe == "perturbed_fvm":
        return perturbed_fvm_field(sgrid, agrid, state, nu, modes)
    return angular_perturbed_fvm_field(sgrid, agrid, state, nu, modes)
