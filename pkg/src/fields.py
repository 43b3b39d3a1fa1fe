"""
Phase-space grids and the discretised one-particle density f(x, omega, t)
"""
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

import config
from src.errors import DomainError, GridMismatchError
from src.sphere_calculus import AngularGrid


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid on the torus T^{d_x} of side `length`"""

    dim: int
    n_cells: int
    length: float = config.DEFAULT_LENGTH

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError(f"spatial dimension must be 1 or 2, got {self.dim}")
        if self.n_cells < 1 or self.n_cells & (self.n_cells - 1):
            raise DomainError(f"cells per axis must be a power of two, got {self.n_cells}")
        if not self.length > 0:
            raise DomainError(f"domain length must be positive, got {self.length}")

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n_cells,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.dim

    @property
    def volume(self) -> float:
        return self.length ** self.dim

    def centers(self) -> np.ndarray:
        """Cell centres, shape (*shape, dim)"""
        axis = (np.arange(self.n_cells) + 0.5) * self.dx
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    def wrap(self, positions: np.ndarray) -> np.ndarray:
        return np.mod(positions, self.length)

    def minimum_image(self, displacement: np.ndarray) -> np.ndarray:
        return displacement - self.length * np.round(displacement / self.length)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n_cells": self.n_cells, "length": self.length}

    @classmethod
    def from_dict(cls, data: dict) -> "SpatialGrid":
        return cls(int(data["dim"]), int(data["n_cells"]), float(data["length"]))


def phase_space_weights(sgrid: SpatialGrid, agrid: AngularGrid) -> np.ndarray:
    """Quadrature weight of every (cell, node) pair, broadcastable against f"""
    return sgrid.cell_volume * agrid.weights


@dataclass(frozen=True, eq=False)
class DistributionField:
    """Values f[cell...][node] with attached grids and time stamp"""

    values: np.ndarray
    sgrid: SpatialGrid
    agrid: AngularGrid
    time: float = 0.0
    initial_mass: float = field(default=float("nan"))

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        expected = self.sgrid.shape + (self.agrid.n_nodes,)
        if values.shape != expected:
            raise GridMismatchError(f"field shape {values.shape} does not match grids {expected}")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if np.isnan(self.initial_mass):
            object.__setattr__(self, "initial_mass", self.mass)

    @property
    def weights(self) -> np.ndarray:
        return phase_space_weights(self.sgrid, self.agrid)

    @property
    def mass(self) -> float:
        return float(np.sum(self.values * self.weights))

    @property
    def spatial_density(self) -> np.ndarray:
        """rho(x) = integral of f over the sphere"""
        return self.values @ self.agrid.weights

    def evolved(self, values: np.ndarray, time: float) -> "DistributionField":
        """Same grids and recorded mass, new values and time"""
        return replace(self, values=values, time=time)

    def check_compatible(self, other: "DistributionField"):
        if self.sgrid != other.sgrid or not self.agrid.same_as(other.agrid):
            raise GridMismatchError("distribution fields live on different grids")

    def header(self) -> dict:
        return {
            "time": self.time,
            "initial_mass": self.initial_mass,
            "spatial_grid": self.sgrid.to_dict(),
            "angular_grid": self.agrid.to_dict(),
        }
