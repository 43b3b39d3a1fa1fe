"""
Particle Simulator Module
N agents on the torus with unit velocity directions aligning with the
normalised sum of their neighbours' directions, under Brownian noise
on the sphere.

Random numbers come from counter-based Philox streams keyed by the run seed;
the counter of step n is fixed by n alone, so trajectories do not depend on
how work is scheduled.
"""
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

import config
from src.errors import DomainError, SolverDivergenceError
from src.fields import DistributionField, SpatialGrid
from src.model import FrequencySpec, FvMState, sample_fvm
from src.sphere_calculus import AngularGrid
from src.utils import setup_logger

logger = setup_logger(__name__)

TIE_TOL = 1e-12  # |Jbar| below TIE_TOL * neighbour count counts as zero
_STEP_STREAM = 0
_INIT_STREAM = 1


def philox_rng(seed: int, counter: int = 0, stream: int = _STEP_STREAM) -> np.random.Generator:
    """Generator for (seed, stream) whose 256-bit counter starts at `counter` in its high word"""
    if not 0 <= seed < 2 ** 64:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    bit_generator = np.random.Philox(key=int(seed) | (int(stream) << 64), counter=[0, 0, 0, int(counter)])
    return np.random.Generator(bit_generator)


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Positions on T^{d_x} of side `length` and unit directions in R^d"""

    positions: np.ndarray
    directions: np.ndarray
    length: float
    seed: int
    step: int = 0
    time: float = 0.0

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float)
        directions = np.array(self.directions, dtype=float)
        if positions.ndim == 1:
            positions = positions[:, None]
        if positions.shape[1] not in (1, 2) or directions.ndim != 2 or directions.shape[1] not in (2, 3):
            raise DomainError(f"bad ensemble shapes {positions.shape}, {directions.shape}")
        if positions.shape[0] != directions.shape[0]:
            raise DomainError("positions and directions disagree on the particle count")
        if directions.size and np.max(np.abs(np.linalg.norm(directions, axis=1) - 1.0)) > config.UNIT_NORM_TOL:
            raise DomainError("ensemble directions must be unit vectors")
        if not self.length > 0:
            raise DomainError(f"domain length must be positive, got {self.length}")
        positions = np.mod(positions, self.length)
        positions.setflags(write=False)
        directions.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "directions", directions)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def x_dim(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    def header(self) -> dict:
        return {"n": self.n, "x_dim": self.x_dim, "dim": self.dim, "length": self.length,
                "seed": self.seed, "step": self.step, "time": self.time}


@dataclass(frozen=True)
class SimParams:
    radius: float = config.DEFAULT_RADIUS
    mu: float = config.DEFAULT_MU
    dt: float = config.DEFAULT_DT
    nu: FrequencySpec = FrequencySpec.constant()
    tie_policy: str = "keep"

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"interaction radius must be positive, got {self.radius}")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.mu < 0:
            raise DomainError(f"mu must be >= 0, got {self.mu}")
        if self.tie_policy not in config.TIE_POLICIES:
            raise DomainError(f"unknown tie policy {self.tie_policy!r}, expected one of {config.TIE_POLICIES}")
        if self.noise_amplitude > config.SMALL_ANGLE_LIMIT:
            logger.warning(f"sqrt(2 mu dt) = {self.noise_amplitude:.3f} exceeds {config.SMALL_ANGLE_LIMIT}; "
                           f"the projected Euler step leaves the small-angle regime")

    @property
    def noise_amplitude(self) -> float:
        return float(np.sqrt(2.0 * self.mu * self.dt))

    def to_dict(self) -> dict:
        return {"radius": self.radius, "mu": self.mu, "dt": self.dt,
                "nu": self.nu.to_dict(), "tie_policy": self.tie_policy}


class NeighborSums(NamedTuple):
    flux: np.ndarray
    counts: np.ndarray


# ----------------- Neighbour sums -----------------

def neighbor_flux(ens: ParticleEnsemble, params: SimParams, i: int) -> np.ndarray:
    """Jbar_i = sum of omega_j over |X_j - X_i| <= R (periodic distance, self included)"""
    displacement = ens.positions - ens.positions[i]
    displacement -= ens.length * np.round(displacement / ens.length)
    close = np.linalg.norm(displacement, axis=1) <= params.radius
    return ens.directions[close].sum(axis=0)


def _fluxes_1d(ens: ParticleEnsemble, radius: float) -> NeighborSums:
    x = ens.positions[:, 0]
    n = ens.n
    if 2.0 * radius >= ens.length:
        total = ens.directions.sum(axis=0)
        return NeighborSums(np.broadcast_to(total, ens.directions.shape).copy(), np.full(n, n))

    order = np.argsort(x, kind="stable")
    xs = x[order]
    ds = ens.directions[order]
    extended = np.concatenate((xs - ens.length, xs, xs + ens.length))
    prefix = np.zeros((3 * n + 1, ens.dim))
    np.cumsum(np.concatenate((ds, ds, ds)), axis=0, out=prefix[1:])
    lo = np.searchsorted(extended, xs - radius, side="left")
    hi = np.searchsorted(extended, xs + radius, side="right")

    flux = np.empty_like(ens.directions)
    counts = np.empty(n, dtype=int)
    flux[order] = prefix[hi] - prefix[lo]
    counts[order] = hi - lo
    return NeighborSums(flux, counts)


def _fluxes_2d(ens: ParticleEnsemble, radius: float) -> NeighborSums:
    """Cell lists with edge >= R; candidate pairs are formed one neighbour offset at a time"""
    n_side = max(1, int(np.floor(ens.length / radius)))
    edge = ens.length / n_side
    cell_xy = np.minimum((ens.positions / edge).astype(int), n_side - 1)
    cell_id = cell_xy[:, 0] * n_side + cell_xy[:, 1]
    order = np.argsort(cell_id, kind="stable")
    starts = np.searchsorted(cell_id[order], np.arange(n_side * n_side), side="left")
    ends = np.searchsorted(cell_id[order], np.arange(n_side * n_side), side="right")

    steps = sorted({(dx % n_side, dy % n_side) for dx in (-1, 0, 1) for dy in (-1, 0, 1)})
    flux = np.zeros_like(ens.directions)
    counts = np.zeros(ens.n, dtype=int)
    particles = np.arange(ens.n)
    for dx, dy in steps:
        target = ((cell_xy[:, 0] + dx) % n_side) * n_side + (cell_xy[:, 1] + dy) % n_side
        first, sizes = starts[target], ends[target] - starts[target]
        owner = np.repeat(particles, sizes)
        if owner.size == 0:
            continue
        offsets = np.arange(owner.size) - np.repeat(np.cumsum(sizes) - sizes, sizes)
        partner = order[np.repeat(first, sizes) + offsets]
        displacement = ens.positions[partner] - ens.positions[owner]
        displacement -= ens.length * np.round(displacement / ens.length)
        close = np.einsum("ij,ij->i", displacement, displacement) <= radius ** 2
        owner, partner = owner[close], partner[close]
        counts += np.bincount(owner, minlength=ens.n)
        for k in range(ens.dim):
            flux[:, k] += np.bincount(owner, weights=ens.directions[partner, k], minlength=ens.n)
    return NeighborSums(flux, counts)


def neighbor_fluxes(ens: ParticleEnsemble, params: SimParams) -> NeighborSums:
    """All Jbar_i at once, with neighbour counts (self included)"""
    if ens.x_dim == 1:
        return _fluxes_1d(ens, params.radius)
    return _fluxes_2d(ens, params.radius)


def _project(omega: np.ndarray, v: np.ndarray) -> np.ndarray:
    return v - np.sum(omega * v, axis=1, keepdims=True) * omega


def _random_directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    draws = rng.standard_normal((n, dim))
    return draws / np.linalg.norm(draws, axis=1, keepdims=True)


def mean_directions(ens: ParticleEnsemble, sums: NeighborSums, tie_policy: str = "keep",
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Omega_bar_i = Jbar_i / |Jbar_i|, with the tie policy where Jbar_i vanishes"""
    speed = np.linalg.norm(sums.flux, axis=1)
    tie = speed <= TIE_TOL * np.maximum(sums.counts, 1)
    safe = np.where(tie, 1.0, speed)
    omega_bar = sums.flux / safe[:, None]
    if np.any(tie):
        if tie_policy == "keep":
            omega_bar[tie] = ens.directions[tie]
        else:
            rng = rng or philox_rng(ens.seed, ens.step)
            omega_bar[tie] = _random_directions(rng, int(np.sum(tie)), ens.dim)
    return omega_bar


def sde_step(ens: ParticleEnsemble, params: SimParams) -> ParticleEnsemble:
    """One projected Euler step with renormalisation (Stratonovich on the sphere)"""
    rng = philox_rng(ens.seed, ens.step)
    xi = rng.standard_normal(ens.directions.shape)
    sums = neighbor_fluxes(ens, params)
    omega = ens.directions
    omega_bar = mean_directions(ens, sums, params.tie_policy, rng)

    alignment = np.sum(omega * omega_bar, axis=1)
    drift = params.nu.nu(np.clip(alignment, -1.0, 1.0))[:, None] * _project(omega, omega_bar)
    updated = omega + params.dt * drift + params.noise_amplitude * _project(omega, xi)
    updated /= np.linalg.norm(updated, axis=1, keepdims=True)
    positions = ens.positions + params.dt * updated[:, :ens.x_dim]

    if not (np.all(np.isfinite(updated)) and np.all(np.isfinite(positions))):
        logger.error(f"Non-finite particle state at step {ens.step + 1}")
        raise SolverDivergenceError(f"non-finite particle state at step {ens.step + 1}")
    return replace(ens, positions=positions, directions=updated,
                   step=ens.step + 1, time=ens.time + params.dt)


# ----------------- Observables -----------------

def order_parameter(ens: ParticleEnsemble) -> float:
    """|sum omega_i| / N"""
    return float(np.linalg.norm(ens.directions.sum(axis=0)) / ens.n)


def summary_row(ens: ParticleEnsemble, params: SimParams) -> Dict[str, float]:
    sums = neighbor_fluxes(ens, params)
    omega_bar = mean_directions(ens, sums)
    return {
        "time": ens.time,
        "order_parameter": order_parameter(ens),
        "mean_abs_Jbar": float(np.mean(np.linalg.norm(sums.flux, axis=1))),
        "mean_alignment": float(np.mean(np.sum(ens.directions * omega_bar, axis=1))),
        "mean_neighbors": float(np.mean(sums.counts)),
    }


def simulate(ens: ParticleEnsemble, params: SimParams, t_final: float,
             record_every: int = 1) -> Tuple[ParticleEnsemble, List[Dict[str, float]]]:
    """Advance to t_final; a summary row at step 0 and every `record_every` steps"""
    n_steps = max(1, int(np.ceil(t_final / params.dt - 1e-9)))
    logger.info(f"Simulating {ens.n} particles on T^{ens.x_dim} for {n_steps} steps "
                f"(R = {params.radius}, mu = {params.mu}, dt = {params.dt})")
    rows = [summary_row(ens, params)]
    for step in range(1, n_steps + 1):
        ens = sde_step(ens, params)
        if record_every and (step % record_every == 0 or step == n_steps):
            rows.append(summary_row(ens, params))
    logger.info(f"Finished at t = {ens.time:.6g}, order parameter {order_parameter(ens):.4f}")
    return ens, rows


def empirical_density(ens: ParticleEnsemble, sgrid: SpatialGrid, agrid: AngularGrid,
                      bandwidth: float = 0.0, mass: float = 1.0) -> DistributionField:
    """Histogram of (X_i, angle of omega_i) on the solver's grids with total `mass`

    bandwidth > 0 smooths spatially with a periodic Gaussian of that standard
    deviation (applied in Fourier space, mass preserving).
    """
    if ens.x_dim != sgrid.dim or not agrid.spectral or ens.dim != 2 or ens.length != sgrid.length:
        raise DomainError("empirical density needs matching spatial dimension and planar directions")
    if not mass > 0:
        raise DomainError(f"mass must be positive, got {mass}")
    if bandwidth < 0:
        raise DomainError(f"bandwidth must be >= 0, got {bandwidth}")
    cells = np.minimum((ens.positions / sgrid.dx).astype(int), sgrid.n_cells - 1)
    angle = np.mod(np.arctan2(ens.directions[:, 1], ens.directions[:, 0]), 2.0 * np.pi)
    node = np.mod(np.rint(angle / (2.0 * np.pi / agrid.n_nodes)).astype(int), agrid.n_nodes)

    shape = sgrid.shape + (agrid.n_nodes,)
    flat = np.ravel_multi_index(tuple(cells.T) + (node,), shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape)
    values = mass * counts / (ens.n * sgrid.cell_volume * agrid.weights)

    if bandwidth > 0:
        axes = tuple(range(sgrid.dim))
        k = [2.0 * np.pi * np.fft.fftfreq(sgrid.n_cells, d=sgrid.dx)] * (sgrid.dim - 1)
        k.append(2.0 * np.pi * np.fft.rfftfreq(sgrid.n_cells, d=sgrid.dx))
        k2 = sum(np.meshgrid(*[kk ** 2 for kk in k], indexing="ij"))
        smoothing = np.exp(-0.5 * k2 * bandwidth ** 2)[..., None]
        values = np.fft.irfftn(np.fft.rfftn(values, axes=axes) * smoothing, s=sgrid.shape, axes=axes)
    return DistributionField(values, sgrid, agrid, time=ens.time)


# ----------------- Builders -----------------

def uniform_ensemble(n: int, x_dim: int, length: float, seed: int, dim: int = 2) -> ParticleEnsemble:
    rng = philox_rng(seed, 0, _INIT_STREAM)
    positions = rng.random((n, x_dim)) * length
    return ParticleEnsemble(positions, _random_directions(rng, n, dim), length, seed)


def fvm_ensemble(n: int, x_dim: int, length: float, state: FvMState,
                 nu: FrequencySpec, seed: int) -> ParticleEnsemble:
    """Uniform positions, directions drawn from rho M_Omega"""
    rng = philox_rng(seed, 0, _INIT_STREAM)
    positions = rng.random((n, x_dim)) * length
    return ParticleEnsemble(positions, sample_fvm(state, nu, n, rng), length, seed)


def sample_from_field(f: DistributionField, n: int, seed: int) -> ParticleEnsemble:
    """n particles distributed like f: a (cell, node) pair by mass, then uniform jitter inside it"""
    if not f.agrid.spectral:
        raise DomainError("sampling from a field needs the S^1 grid")
    rng = philox_rng(seed, 0, _INIT_STREAM)
    mass = np.clip(f.values, 0.0, None) * f.weights
    probabilities = (mass / mass.sum()).ravel()
    picks = rng.choice(probabilities.size, size=n, p=probabilities)
    index = np.unravel_index(picks, mass.shape)
    sgrid = f.sgrid
    positions = np.stack([(index[a] + rng.random(n)) * sgrid.dx for a in range(sgrid.dim)], axis=1)
    spacing = 2.0 * np.pi / f.agrid.n_nodes
    angle = f.agrid.theta[index[-1]] + (rng.random(n) - 0.5) * spacing
    directions = np.column_stack((np.cos(angle), np.sin(angle)))
    return ParticleEnsemble(positions, directions, sgrid.length, seed)
