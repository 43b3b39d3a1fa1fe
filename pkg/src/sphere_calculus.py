"""
Sphere Calculus Module
Projection algebra on S^{d-1}, spectral angular operators on S^1 and
quadrature on S^1 / S^2.

Angular fields are numpy arrays whose LAST axis runs over the nodes of an
AngularGrid; any leading axes (spatial cells, batches) are carried through.
Tangent fields add one more trailing axis of length d holding the ambient
vector at each node.
"""
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

import config
from src.errors import DomainError, GridMismatchError

ArrayLike = Union[np.ndarray, list, tuple]


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Direction:
    """A unit vector of R^2 or R^3"""

    components: np.ndarray

    def __post_init__(self):
        components = _readonly(self.components)
        if components.ndim != 1 or components.shape[0] not in (2, 3):
            raise DomainError(f"direction must have 2 or 3 components, got shape {components.shape}")
        norm = float(np.linalg.norm(components))
        if abs(norm - 1.0) > config.UNIT_NORM_TOL:
            raise DomainError(f"direction is not unit length: |omega| = {norm!r}")
        object.__setattr__(self, "components", components)

    @classmethod
    def from_vector(cls, v: ArrayLike) -> "Direction":
        v = np.asarray(v, dtype=float)
        norm = float(np.linalg.norm(v))
        if norm == 0.0 or not np.isfinite(norm):
            raise DomainError("cannot normalise a zero or non-finite vector")
        return cls(v / norm)

    @classmethod
    def from_angle(cls, theta: float) -> "Direction":
        return cls(np.array([np.cos(theta), np.sin(theta)]))

    @classmethod
    def from_spherical(cls, polar: float, azimuth: float) -> "Direction":
        s = np.sin(polar)
        return cls.from_vector([s * np.cos(azimuth), s * np.sin(azimuth), np.cos(polar)])

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    @property
    def angle(self) -> float:
        """Polar angle in the (e1, e2) plane"""
        return float(np.arctan2(self.components[1], self.components[0]))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.components, dtype=dtype)

    def __repr__(self) -> str:
        return f"Direction({np.array2string(self.components, precision=6)})"


@dataclass(frozen=True, eq=False)
class AngularGrid:
    """Nodes and quadrature weights on S^{d-1}

    d = 2: uniform nodes theta_j = 2 pi j / N, weights 2 pi / N (spectral
    differentiation available). d = 3: Gauss-Legendre in u = cos(theta)
    tensor uniform azimuth (quadrature only).
    """

    dim: int
    n_nodes: int
    nodes: np.ndarray
    weights: np.ndarray
    theta: Optional[np.ndarray] = None

    @classmethod
    def circle(cls, n_theta: int) -> "AngularGrid":
        if n_theta < 4 or n_theta % 2:
            raise DomainError(f"circle grid needs an even node count >= 4, got {n_theta}")
        theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
        nodes = np.column_stack((np.cos(theta), np.sin(theta)))
        weights = np.full(n_theta, 2.0 * np.pi / n_theta)
        return cls(2, n_theta, _readonly(nodes), _readonly(weights), _readonly(theta))

    @classmethod
    def sphere(cls, n_polar: int = config.GAUSS_LEGENDRE_NODES,
               n_azimuth: int = config.SPHERE_AZIMUTH_NODES) -> "AngularGrid":
        u, w_u = np.polynomial.legendre.leggauss(n_polar)
        phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
        uu, pp = np.meshgrid(u, phi, indexing="ij")
        s = np.sqrt(1.0 - uu ** 2)
        nodes = np.stack((s * np.cos(pp), s * np.sin(pp), uu), axis=-1).reshape(-1, 3)
        weights = np.repeat(w_u, n_azimuth) * (2.0 * np.pi / n_azimuth)
        return cls(3, nodes.shape[0], _readonly(nodes), _readonly(weights))

    @classmethod
    def for_dimension(cls, dim: int, n_theta: int = config.REFERENCE_CIRCLE_NODES) -> "AngularGrid":
        if dim == 2:
            return cls.circle(n_theta)
        if dim == 3:
            return cls.sphere()
        raise DomainError(f"unsupported sphere dimension d = {dim}")

    @property
    def measure(self) -> float:
        """|S^{d-1}|"""
        return 2.0 * np.pi if self.dim == 2 else 4.0 * np.pi

    @property
    def spectral(self) -> bool:
        return self.dim == 2

    @property
    def wavenumbers(self) -> np.ndarray:
        """Non-negative Fourier wavenumbers 0..N/2 of the rfft layout"""
        self._require_spectral()
        return np.fft.rfftfreq(self.n_nodes, d=1.0 / self.n_nodes)

    @property
    def k_max(self) -> int:
        return self.n_nodes // 2

    @property
    def tangents(self) -> np.ndarray:
        """Unit tangents tau(theta) = (-sin theta, cos theta)"""
        self._require_spectral()
        return np.column_stack((-self.nodes[:, 1], self.nodes[:, 0]))

    def same_as(self, other: "AngularGrid") -> bool:
        return (self.dim == other.dim and self.n_nodes == other.n_nodes
                and np.array_equal(self.nodes, other.nodes))

    def _require_spectral(self):
        if not self.spectral:
            raise DomainError("angular differentiation is only available on S^1 (d = 2)")

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n_nodes": self.n_nodes}

    @classmethod
    def from_dict(cls, data: dict) -> "AngularGrid":
        if data["dim"] == 2:
            return cls.circle(int(data["n_nodes"]))
        return cls.sphere()


@dataclass(frozen=True, eq=False)
class TangentField:
    """Ambient d-vectors at each node, tangent to the sphere there"""

    grid: AngularGrid
    values: np.ndarray

    @classmethod
    def from_ambient(cls, grid: AngularGrid, values: np.ndarray) -> "TangentField":
        values = np.asarray(values, dtype=float)
        return cls(grid, project_nodes(grid.nodes, values))

    def normal_residual(self) -> float:
        """max |value . node| over all nodes"""
        if self.values.size == 0:
            return 0.0
        return float(np.max(np.abs(np.einsum("...nd,nd->...n", self.values, self.grid.nodes))))

    def tangential_component(self) -> np.ndarray:
        """Scalar g with F = g tau on S^1"""
        return np.einsum("...nd,nd->...n", self.values, self.grid.tangents)


def _check_unit(omega: np.ndarray):
    norms = np.linalg.norm(omega, axis=-1)
    if np.any(np.abs(norms - 1.0) > config.DIRECTION_INPUT_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise DomainError(f"projection needs unit directions, |omega| deviates by {worst:.3e}")


def project_tangent(omega: Union[Direction, ArrayLike], v: ArrayLike) -> np.ndarray:
    """P_{omega perp} v = v - (omega . v) omega"""
    omega = np.asarray(omega, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_unit(omega)
    return v - np.sum(omega * v, axis=-1, keepdims=True) * omega


def project_nodes(nodes: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Project v (broadcastable to (..., n, d)) onto the tangent plane at every node"""
    return v - np.sum(nodes * v, axis=-1, keepdims=True) * nodes


def _check_values(values: np.ndarray, grid: AngularGrid) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.n_nodes:
        raise GridMismatchError(
            f"field has {values.shape[-1]} angular values, grid has {grid.n_nodes} nodes")
    if not np.all(np.isfinite(values)):
        raise DomainError("angular field contains non-finite values")
    return values


def spectral_derivative(values: np.ndarray, grid: AngularGrid, order: int = 1) -> np.ndarray:
    """d^order/dtheta^order along the last axis by discrete Fourier differentiation"""
    grid._require_spectral()
    k = grid.wavenumbers
    multiplier = (1j * k) ** order
    if order % 2 == 1:
        # Nyquist mode has no odd derivative on a real grid
        multiplier[-1] = 0.0
    coeffs = np.fft.rfft(values, axis=-1)
    return np.fft.irfft(coeffs * multiplier, n=grid.n_nodes, axis=-1)


def angular_gradient(values: np.ndarray, grid: AngularGrid) -> TangentField:
    """nabla_omega f = (d f / d theta) tau(theta) on S^1"""
    grid._require_spectral()
    values = _check_values(values, grid)
    d_f = spectral_derivative(values, grid)
    return TangentField(grid, d_f[..., None] * grid.tangents)


def angular_divergence(field: TangentField) -> np.ndarray:
    """nabla_omega . F for a tangent field F = g tau on S^1, i.e. dg/dtheta"""
    grid = field.grid
    grid._require_spectral()
    scale = max(1.0, float(np.max(np.abs(field.values)))) if field.values.size else 1.0
    residual = field.normal_residual()
    if residual > config.TANGENT_TOL * scale:
        raise DomainError(f"field is not tangent: max |F . omega| = {residual:.3e}")
    return spectral_derivative(field.tangential_component(), grid)


def laplace_beltrami(values: np.ndarray, grid: AngularGrid) -> np.ndarray:
    """Delta_omega f on S^1: multiplies e^{ik theta} by -k^2"""
    values = _check_values(values, grid)
    return spectral_derivative(values, grid, order=2)


def integrate_sphere(values: np.ndarray, grid: AngularGrid) -> np.ndarray:
    """Quadrature sum_j w_j f_j over the last axis"""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.n_nodes:
        raise GridMismatchError(
            f"field has {values.shape[-1]} angular values, grid has {grid.n_nodes} nodes")
    return values @ grid.weights
