"""
Model Module
Constitutive content of the kinetic alignment model: interaction frequency
nu and its antiderivative sigma, observation kernel K, flux J, regularised
director, force coefficients and Fisher-von Mises equilibria.
"""
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import ive

import config
from src.errors import AdmissibilityError, DomainError, GridMismatchError
from src.fields import DistributionField, SpatialGrid
from src.sphere_calculus import (
    AngularGrid, Direction, TangentField, integrate_sphere, project_nodes, spectral_derivative,
)
from src.utils import setup_logger

logger = setup_logger(__name__)

FREQUENCY_FAMILIES = ("constant", "affine", "tabulated")
KERNEL_FAMILIES = ("dirac", "gaussian", "tophat")

_C_TOL = 1e-12


# ----------------- Interaction frequency -----------------

@dataclass(frozen=True, eq=False)
class FrequencySpec:
    """nu(c), c = omega . Omega in [-1, 1], with derivatives and antiderivative sigma (sigma(0) = 0)"""

    family: str
    params: Tuple[float, ...]
    spline: Optional[CubicSpline] = None

    @classmethod
    def constant(cls, nu0: float = config.DEFAULT_NU0) -> "FrequencySpec":
        # nu0 = 0 switches the alignment force off
        if nu0 < 0:
            raise DomainError(f"constant frequency must be >= 0, got {nu0}")
        return cls("constant", (float(nu0),))

    @classmethod
    def affine(cls, a: float, b: float) -> "FrequencySpec":
        if not a > abs(b):
            raise DomainError(f"affine frequency a + b c needs a > |b|, got a={a}, b={b}")
        return cls("affine", (float(a), float(b)))

    @classmethod
    def tabulated(cls, samples) -> "FrequencySpec":
        """Cubic spline through samples at equally spaced c in [-1, 1]"""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 1 or samples.size < 4:
            raise DomainError("tabulated frequency needs at least 4 samples")
        if np.any(samples <= 0):
            raise DomainError("tabulated frequency samples must be positive")
        spline = CubicSpline(np.linspace(-1.0, 1.0, samples.size), samples)
        dense = spline(np.linspace(-1.0, 1.0, 2001))
        if np.any(dense <= 0):
            raise DomainError("spline through the tabulated samples is not positive on [-1, 1]")
        return cls("tabulated", tuple(samples.tolist()), spline)

    @classmethod
    def from_dict(cls, data: dict) -> "FrequencySpec":
        family = data["family"]
        params = data["params"]
        if family == "constant":
            return cls.constant(*params)
        if family == "affine":
            return cls.affine(*params)
        if family == "tabulated":
            return cls.tabulated(params)
        raise DomainError(f"unknown frequency family {family!r}")

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params)}

    @property
    def is_zero(self) -> bool:
        return self.family == "constant" and self.params[0] == 0.0

    def nu(self, c):
        c = np.asarray(c, dtype=float)
        if self.family == "constant":
            return np.full_like(c, self.params[0])
        if self.family == "affine":
            a, b = self.params
            return a + b * c
        return self.spline(c)

    def dnu(self, c):
        c = np.asarray(c, dtype=float)
        if self.family == "constant":
            return np.zeros_like(c)
        if self.family == "affine":
            return np.full_like(c, self.params[1])
        return self.spline(c, 1)

    def d2nu(self, c):
        c = np.asarray(c, dtype=float)
        if self.family == "tabulated":
            return self.spline(c, 2)
        return np.zeros_like(c)

    def sigma_unchecked(self, c):
        c = np.asarray(c, dtype=float)
        if self.family == "constant":
            return self.params[0] * c
        if self.family == "affine":
            a, b = self.params
            return a * c + 0.5 * b * c ** 2
        antiderivative = self.spline.antiderivative()
        return antiderivative(c) - antiderivative(0.0)

    def sup_norms(self) -> Tuple[float, float]:
        """(sup |nu|, sup |nu'|) over [-1, 1]"""
        if self.family == "constant":
            return abs(self.params[0]), 0.0
        if self.family == "affine":
            a, b = self.params
            return a + abs(b), abs(b)
        c = np.linspace(-1.0, 1.0, 4001)
        return float(np.max(np.abs(self.nu(c)))), float(np.max(np.abs(self.dnu(c))))

    def __repr__(self) -> str:
        if self.family == "tabulated":
            return f"FrequencySpec(tabulated, {len(self.params)} samples)"
        return f"FrequencySpec({self.family}, {self.params})"


def sigma(spec: FrequencySpec, c):
    """Antiderivative of nu with sigma(0) = 0"""
    c_arr = np.asarray(c, dtype=float)
    if np.any(np.abs(c_arr) > 1.0 + _C_TOL):
        raise DomainError(f"sigma is defined on [-1, 1], got {c}")
    value = spec.sigma_unchecked(np.clip(c_arr, -1.0, 1.0))
    return float(value) if np.ndim(value) == 0 else value


def growth_constant(nu: FrequencySpec, dim: int = 2) -> float:
    """C = ||nu'|| + ||nu|| + (d - 1) ||nu|| from the a priori L^p estimate"""
    sup_nu, sup_dnu = nu.sup_norms()
    return sup_dnu + sup_nu + (dim - 1) * sup_nu


# ----------------- Observation kernel -----------------

@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Isotropic periodic kernel sampled on a SpatialGrid with cached transform"""

    family: str
    width: float
    grid: SpatialGrid
    samples: np.ndarray
    transform: Optional[np.ndarray]
    l1_norm: float

    @classmethod
    def build(cls, family: str, grid: SpatialGrid, width: float = 0.0) -> "KernelSpec":
        """Kernels are normalised to unit L^1 norm on the torus"""
        if family not in KERNEL_FAMILIES:
            raise DomainError(f"unknown kernel family {family!r}, expected one of {KERNEL_FAMILIES}")
        offsets = np.stack(np.meshgrid(*([np.arange(grid.n_cells) * grid.dx] * grid.dim),
                                       indexing="ij"), axis=-1)
        r = np.linalg.norm(grid.minimum_image(offsets), axis=-1)

        if family == "dirac":
            samples = np.zeros(grid.shape)
            samples[(0,) * grid.dim] = 1.0 / grid.cell_volume
            samples.setflags(write=False)
            return cls(family, 0.0, grid, samples, None, 1.0)

        if not width > 0:
            raise DomainError(f"{family} kernel needs a positive width, got {width}")
        if family == "gaussian":
            raw = np.exp(-0.5 * (r / width) ** 2)
        else:
            raw = (r <= width * (1.0 + 1e-12)).astype(float)
        samples = raw / (np.sum(raw) * grid.cell_volume)
        transform = np.fft.rfftn(samples) * grid.cell_volume
        samples.setflags(write=False)
        transform.setflags(write=False)
        return cls(family, float(width), grid, samples, transform,
                   float(np.sum(np.abs(samples)) * grid.cell_volume))

    @property
    def is_identity(self) -> bool:
        return self.transform is None

    def convolve(self, values: np.ndarray) -> np.ndarray:
        """(K *_x values)(x) for values of shape (*grid.shape, ...)"""
        if self.is_identity:
            return np.array(values, dtype=float, copy=True)
        axes = tuple(range(self.grid.dim))
        trailing = values.ndim - self.grid.dim
        kernel_hat = self.transform.reshape(self.transform.shape + (1,) * trailing)
        coeffs = np.fft.rfftn(values, axes=axes)
        return np.fft.irfftn(coeffs * kernel_hat, s=self.grid.shape, axes=axes)

    def to_dict(self) -> dict:
        return {"family": self.family, "width": self.width}


# ----------------- Moments -----------------

@dataclass(frozen=True, eq=False)
class MomentField:
    """Per-cell flux J and (optionally) regularised director Omega_eps"""

    flux: np.ndarray
    director: Optional[np.ndarray] = None
    eps: Optional[float] = None

    @classmethod
    def from_director(cls, director: np.ndarray) -> "MomentField":
        """Frozen director given directly (flux unknown, set equal to the director)"""
        director = np.asarray(director, dtype=float)
        return cls(director, director, None)

    @property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.flux, axis=-1)

    @property
    def min_speed(self) -> float:
        return float(np.min(self.speed))

    def weakest_cell(self) -> Tuple[int, ...]:
        speed = self.speed
        return tuple(int(i) for i in np.unravel_index(np.argmin(speed), speed.shape))

    def admissible(self, alpha: float) -> bool:
        """Membership of the class |J| > alpha at this instant"""
        return self.min_speed > alpha


def flux_J(f: DistributionField, K: KernelSpec) -> MomentField:
    """J(x) = (K *_x m)(x), m(x) = integral of omega f(x, omega) over the sphere

    A flux within roundoff of the local mass is returned as exactly zero.
    """
    if K.grid != f.sgrid:
        raise GridMismatchError("kernel and field are built on different spatial grids")
    weighted_nodes = f.agrid.nodes * f.agrid.weights[:, None]
    flux = K.convolve(f.values @ weighted_nodes)
    local_mass = K.convolve(np.abs(f.values) @ f.agrid.weights)
    roundoff = config.FLUX_ROUNDOFF_ULPS * np.finfo(float).eps * np.abs(local_mass)
    flux[np.linalg.norm(flux, axis=-1) <= roundoff] = 0.0
    return MomentField(flux)


def director_eps(J: MomentField, eps: float) -> MomentField:
    """Omega_eps = J / (|J| + eps) per cell"""
    if eps < 0:
        raise DomainError(f"regularisation must be >= 0, got {eps}")
    speed = J.speed
    if eps == 0.0 and np.any(speed == 0.0):
        cell = J.weakest_cell()
        raise AdmissibilityError(f"flux vanishes at cell {cell}; the director is undefined for eps = 0",
                                 cell=cell)
    director = J.flux / (speed + eps)[..., None]
    return MomentField(J.flux, director, float(eps))


class ForceCoefficients(NamedTuple):
    psi1: TangentField
    psi2: np.ndarray
    psi3: np.ndarray


def force_coefficients(Omega: np.ndarray, nu: FrequencySpec, grid: AngularGrid) -> ForceCoefficients:
    """psi1 = nu(c) P Omega, psi2 = nu'(c) |P Omega|^2, psi3 = -(d-1) nu(c) c with c = omega . Omega

    Omega may carry leading cell axes; the coefficients then have shape (..., n[, d]).
    """
    Omega = np.asarray(Omega, dtype=float)
    if np.any(np.linalg.norm(Omega, axis=-1) > 1.0 + config.DIRECTION_INPUT_TOL):
        raise DomainError("force coefficients need |Omega| <= 1")
    omega_b = Omega[..., None, :]
    c = np.clip(np.sum(grid.nodes * omega_b, axis=-1), -1.0, 1.0)
    projected = project_nodes(grid.nodes, omega_b)
    nu_c = nu.nu(c)
    psi1 = TangentField(grid, nu_c[..., None] * projected)
    psi2 = nu.dnu(c) * np.sum(projected ** 2, axis=-1)
    psi3 = -(grid.dim - 1) * nu_c * c
    return ForceCoefficients(psi1, psi2, psi3)


# ----------------- Fisher-von Mises equilibria -----------------

@dataclass(frozen=True)
class FvMState:
    rho: float
    director: Direction
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError(f"noise strength mu must be positive, got {self.mu}")
        if not self.rho > 0:
            raise DomainError(f"mass rho must be positive, got {self.rho}")

    @property
    def dim(self) -> int:
        return self.director.dim


def _boltzmann(c, mu: float, nu: FrequencySpec) -> np.ndarray:
    """exp((sigma(c) - sigma(1)) / mu); sigma is increasing so this never overflows"""
    c = np.clip(c, -1.0, 1.0)
    return np.exp((nu.sigma_unchecked(c) - nu.sigma_unchecked(1.0)) / mu)


def fvm_on_grid(state: FvMState, nu: FrequencySpec, grid: AngularGrid) -> np.ndarray:
    """rho M_Omega at every node, normalised so that its quadrature on `grid` equals rho"""
    if state.dim != grid.dim:
        raise GridMismatchError(f"state lives on S^{state.dim - 1}, grid on S^{grid.dim - 1}")
    shape = _boltzmann(grid.nodes @ state.director.components, state.mu, nu)
    return state.rho * shape / integrate_sphere(shape, grid)


def fvm_density(state: FvMState, omega, nu: FrequencySpec,
                grid: Optional[AngularGrid] = None) -> float:
    """rho exp(sigma(omega . Omega) / mu) / Z with Z from integrate_sphere on `grid`"""
    grid = grid or AngularGrid.for_dimension(state.dim)
    omega = np.asarray(omega, dtype=float)
    normaliser = integrate_sphere(_boltzmann(grid.nodes @ state.director.components, state.mu, nu), grid)
    return float(state.rho * _boltzmann(omega @ state.director.components, state.mu, nu) / normaliser)


def _graded_legendre(mu: float, per_panel: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre on [-1, 1] with panels halving towards u = 1"""
    edges = [-1.0]
    h = 1.0
    while h > 1e-2 * mu:
        edges.append(1.0 - h)
        h *= 0.5
    edges.append(1.0)
    x, w = np.polynomial.legendre.leggauss(per_panel)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def c_of_mu(mu: float, nu: FrequencySpec) -> float:
    """Order parameter on S^2: mean of cos(theta) under M_Omega, quadrature in u = cos(theta)"""
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")
    u, w = _graded_legendre(mu, max(64, config.GAUSS_LEGENDRE_NODES // 2))
    weight = w * _boltzmann(u, mu, nu)
    return float(np.sum(u * weight) / np.sum(weight))


def c_of_mu_circle(mu: float, nu: FrequencySpec) -> float:
    """Order parameter on S^1: ratio of circle integrals of cos(theta) e^{sigma(cos theta)/mu}"""
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu}")
    sup_nu, _ = nu.sup_norms()
    n = max(config.REFERENCE_CIRCLE_NODES, 2 * int(np.ceil(8.0 * np.sqrt(2.0 * sup_nu / mu))))
    theta = 2.0 * np.pi * np.arange(n) / n
    weight = _boltzmann(np.cos(theta), mu, nu)
    return float(np.sum(np.cos(theta) * weight) / np.sum(weight))


def langevin_order(mu: float, nu0: float = 1.0) -> float:
    """coth(nu0/mu) - mu/nu0, the S^2 order parameter for constant nu"""
    kappa = nu0 / mu
    return float(1.0 / np.tanh(kappa) - 1.0 / kappa)


def bessel_order(mu: float, nu0: float = 1.0) -> float:
    """I_1(nu0/mu) / I_0(nu0/mu), the S^1 order parameter for constant nu"""
    kappa = nu0 / mu
    return float(ive(1, kappa) / ive(0, kappa))


def symmetric_collision_operator(f: np.ndarray, director: Direction, nu: FrequencySpec,
                                 mu: float, grid: AngularGrid) -> np.ndarray:
    """mu div[M grad(f / M)] on S^1 for a fixed director"""
    shape = _boltzmann(grid.nodes @ director.components, mu, nu)
    inner = shape * spectral_derivative(np.asarray(f, dtype=float) / shape, grid)
    return mu * spectral_derivative(inner, grid)


def sample_fvm(state: FvMState, nu: FrequencySpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """n directions drawn from M_Omega by inverse-CDF sampling, shape (n, d)"""
    if state.dim == 2:
        m = max(config.REFERENCE_CIRCLE_NODES * 8, 8192)
        offsets = np.linspace(-np.pi, np.pi, m + 1)
        density = _boltzmann(np.cos(offsets), state.mu, nu)
        cdf = np.concatenate(([0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(offsets))))
        phi = np.interp(rng.random(n) * cdf[-1], cdf, offsets)
        angle = state.director.angle + phi
        return np.column_stack((np.cos(angle), np.sin(angle)))

    s = np.linspace(0.0, 1.0, 40001)
    u = 1.0 - 2.0 * s ** 2
    u = u[::-1]
    density = _boltzmann(u, state.mu, nu)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(u))))
    cos_t = np.interp(rng.random(n) * cdf[-1], cdf, u)
    sin_t = np.sqrt(np.clip(1.0 - cos_t ** 2, 0.0, None))
    phi = 2.0 * np.pi * rng.random(n)
    axis = state.director.components
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - (helper @ axis) * axis
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    samples = (cos_t[:, None] * axis + sin_t[:, None] * (np.cos(phi)[:, None] * e1
                                                         + np.sin(phi)[:, None] * e2))
    return samples / np.linalg.norm(samples, axis=-1, keepdims=True)
