"""
Kinetic Solver Module
Time evolution of f(x, omega, t) on the torus x S^1 for the regularised
alignment equation

    df/dt + omega . grad_x f = -div_omega(f nu(omega . W) P W) + mu Lap_omega f,
    W = Omega_eps(f) = J / (|J| + eps).

Each time step solves the nonlinear equation by Picard iteration on the
director: the director is frozen at the current iterate, the LINEAR problem
is advanced from the start of the step, and the process repeats until the
L^1 change between iterates falls below tolerance.

The linear substep is Strang split: half-step transport, full angular step,
half-step transport. The angular step writes the force term in flux form
-d/dtheta(g f), g = nu(c) (W . tau), so the zero mode (mass) is never touched,
and integrates it with exponential time differencing: angular diffusion is
exact in the Fourier basis, the force is explicit (second order). Every
accepted step is checked for positivity; a grid too coarse for the
equilibrium at the given mu is reported when the solver is built.

The exponential shift f = e^{lambda t} fbar used in existence proofs for the
linear problem is not applied; it leaves the solution unchanged.
"""
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import exprel

import config
from src.errors import DomainError, GridMismatchError, SolverDivergenceError, StabilityError
from src.fields import DistributionField, SpatialGrid
from src.model import (
    FrequencySpec, FvMState, KernelSpec, MomentField, director_eps, flux_J, force_coefficients,
    fvm_on_grid,
)
from src.sphere_calculus import AngularGrid, Direction, laplace_beltrami, spectral_derivative
from src.utils import setup_logger

logger = setup_logger(__name__)


@dataclass
class SolverConfig:
    """Parameters of one kinetic run"""

    mu: float = config.DEFAULT_MU
    eps: float = config.DEFAULT_EPS
    dt: float = config.DEFAULT_DT
    t_final: float = config.DEFAULT_T_FINAL
    picard_tol: Optional[float] = None  # None: PICARD_REL_TOL * mass
    picard_max_iter: int = config.PICARD_MAX_ITER
    p_list: Tuple[float, ...] = config.DEFAULT_P_LIST
    alpha: float = config.DEFAULT_ALPHA
    nu: FrequencySpec = field(default_factory=FrequencySpec.constant)
    kernel_family: str = "dirac"
    kernel_width: float = 0.0
    transport: str = config.DEFAULT_TRANSPORT

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError(f"mu must be positive, got {self.mu}")
        if self.eps < 0:
            raise DomainError(f"eps must be >= 0, got {self.eps}")
        if not self.dt > 0 or not self.t_final > 0:
            raise DomainError(f"dt and t_final must be positive, got {self.dt}, {self.t_final}")
        if self.picard_tol is not None and not self.picard_tol > 0:
            raise DomainError(f"picard_tol must be positive, got {self.picard_tol}")
        if self.picard_max_iter < 1:
            raise DomainError(f"picard_max_iter must be >= 1, got {self.picard_max_iter}")
        if self.transport not in config.TRANSPORT_SCHEMES:
            raise DomainError(f"unknown transport scheme {self.transport!r}, "
                              f"expected one of {config.TRANSPORT_SCHEMES}")
        for p in self.p_list:
            if p < 1:
                raise DomainError(f"norm order must be >= 1, got {p}")
        self.p_list = tuple(float(p) for p in self.p_list)

    @property
    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.t_final / self.dt - 1e-9)))

    def to_dict(self) -> dict:
        return {
            "mu": self.mu, "eps": self.eps, "dt": self.dt, "t_final": self.t_final,
            "picard_tol": self.picard_tol, "picard_max_iter": self.picard_max_iter,
            "p_list": list(self.p_list), "alpha": self.alpha, "nu": self.nu.to_dict(),
            "kernel_family": self.kernel_family, "kernel_width": self.kernel_width,
            "transport": self.transport,
        }


@dataclass
class StepReport:
    time: float
    mass: float
    norms: Dict[float, float]
    angular_energy_p2: float
    min_abs_J: float
    picard_iters: int
    picard_residual: float
    residuals: List[float] = field(default_factory=list)

    def to_row(self) -> dict:
        return {
            "time": self.time,
            "mass": self.mass,
            "l1": self.norms[1.0],
            "l2": self.norms[2.0],
            "linf": self.norms[math.inf],
            "angular_energy_p2": self.angular_energy_p2,
            "min_abs_J": self.min_abs_J,
            "picard_iters": self.picard_iters,
            "picard_residual": self.picard_residual,
        }


class PicardOutcome(NamedTuple):
    field: DistributionField
    iterations: int
    residuals: List[float]
    moments: MomentField


class EvolveResult(NamedTuple):
    reports: List[StepReport]
    final: DistributionField
    snapshots: List[Path]


# ----------------- Diagnostics -----------------

def lp_norm(f: DistributionField, p: float) -> float:
    """(sum over phase space of w |f|^p)^(1/p); p = inf gives max |f|"""
    if p < 1:
        raise DomainError(f"L^p norm needs p >= 1, got {p}")
    values = np.abs(f.values)
    if math.isinf(p):
        return float(np.max(values))
    return float(np.sum(values ** p * f.weights) ** (1.0 / p))


def angular_energy(f: DistributionField, p: float = 2.0) -> float:
    """Integral over phase space of |grad_omega f^{p/2}|^2"""
    root = np.clip(f.values, 0.0, None) ** (0.5 * p)
    gradient = spectral_derivative(root, f.agrid)
    return float(np.sum(gradient ** 2 * f.weights))


def l1_distance(f: DistributionField, g: DistributionField) -> float:
    f.check_compatible(g)
    return float(np.sum(np.abs(f.values - g.values) * f.weights))


def l2_distance(f: DistributionField, g: DistributionField) -> float:
    f.check_compatible(g)
    return float(np.sqrt(np.sum((f.values - g.values) ** 2 * f.weights)))


def bound_envelope(p: float, C: float, t: float) -> float:
    """Growth factor allowed by the a priori L^p estimate at time t"""
    if p < 1:
        raise DomainError(f"L^p envelope needs p >= 1, got {p}")
    if p == 1:
        return 1.0
    if math.isinf(p):
        return math.exp(C * t)
    return math.exp(C * t * p / (p - 1.0))


def dissipation_lhs(norm_p: float, energy_integral: float, p: float, mu: float) -> float:
    """||f||_p + (2 mu (p-1)/p) (time integral of angular energy)^(1/p)"""
    if p < 1:
        raise DomainError(f"L^p estimate needs p >= 1, got {p}")
    if math.isinf(p):
        return norm_p
    return norm_p + 2.0 * mu * (p - 1.0) / p * max(energy_integral, 0.0) ** (1.0 / p)


# ----------------- Angular operators -----------------

def _tangential_force(director: np.ndarray, nu: FrequencySpec, grid: AngularGrid) -> np.ndarray:
    """g = nu(omega . W) (W . tau) at every node, shape (*cells, n)"""
    coefficients = force_coefficients(director, nu, grid)
    return coefficients.psi1.tangential_component()


def collision_rhs(values: np.ndarray, director: np.ndarray, nu: FrequencySpec,
                  mu: float, grid: AngularGrid) -> np.ndarray:
    """-d/dtheta(g f) + mu f'' (flux form used by the stepper)"""
    g = _tangential_force(director, nu, grid)
    return -spectral_derivative(g * values, grid) + mu * laplace_beltrami(values, grid)


def expanded_rhs(values: np.ndarray, director: np.ndarray, nu: FrequencySpec,
                 mu: float, grid: AngularGrid) -> np.ndarray:
    """-psi_1 . grad f - (psi_2 + psi_3) f + mu Lap f (non-conservative expanded form)"""
    psi1, psi2, psi3 = force_coefficients(director, nu, grid)
    advection = psi1.tangential_component() * spectral_derivative(values, grid)
    return -advection - (psi2 + psi3) * values + mu * laplace_beltrami(values, grid)


class _ExponentialFactors(NamedTuple):
    decay: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray


def _exponential_factors(mu: float, dt: float, grid: AngularGrid) -> _ExponentialFactors:
    k = grid.wavenumbers
    z = -mu * k ** 2 * dt
    phi2 = np.empty_like(z)
    small = np.abs(z) < 1e-3
    phi2[small] = 0.5 + z[small] / 6.0 + z[small] ** 2 / 24.0
    phi2[~small] = (exprel(z[~small]) - 1.0) / z[~small]
    return _ExponentialFactors(np.exp(z), dt * exprel(z), dt * phi2)


def equilibrium_undershoot(mu: float, nu: FrequencySpec, grid: AngularGrid,
                           refine: int = config.RESOLUTION_REFINE) -> float:
    """Depth of the most negative lobe of the trigonometric interpolant of M_Omega, relative to its peak

    Zero when the grid resolves the equilibrium at this noise strength.
    """
    if nu.is_zero:
        return 0.0
    profile = fvm_on_grid(FvMState(1.0, Direction.from_angle(0.0), mu), nu, grid)
    coeffs = np.fft.rfft(profile)
    coeffs[-1] *= 0.5  # Nyquist mode splits into a conjugate pair on the finer grid
    fine = np.fft.irfft(coeffs, n=refine * grid.n_nodes) * refine
    return max(0.0, -float(fine.min()) / float(fine.max()))


# ----------------- Transport -----------------

def _axis_velocity(agrid: AngularGrid, axis: int) -> np.ndarray:
    return agrid.nodes[:, axis]


def _broadcast_index(index: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    """Place an (N, n) index on `axis` and the node axis of a (..., n) array"""
    shape = [1] * ndim
    shape[axis] = index.shape[0]
    shape[-1] = index.shape[1]
    return index.reshape(shape)


def _shift_semi_lagrangian(values: np.ndarray, velocity: np.ndarray, tau: float,
                           sgrid: SpatialGrid, axis: int) -> np.ndarray:
    """Exact-foot linear interpolation: a convex mix of two integer rolls per node"""
    shift = velocity * tau / sgrid.dx
    whole = np.floor(shift)
    frac = shift - whole
    cells = np.arange(sgrid.n_cells)[:, None]
    source = np.mod(cells - whole.astype(int)[None, :], sgrid.n_cells)
    upstream = np.mod(source - 1, sgrid.n_cells)
    near = np.take_along_axis(values, _broadcast_index(source, values.ndim, axis), axis=axis)
    far = np.take_along_axis(values, _broadcast_index(upstream, values.ndim, axis), axis=axis)
    return (1.0 - frac) * near + frac * far


def _shift_upwind(values: np.ndarray, velocity: np.ndarray, tau: float,
                  sgrid: SpatialGrid, axis: int) -> np.ndarray:
    courant = velocity * tau / sgrid.dx
    cfl = float(np.max(np.abs(courant)))
    if cfl > config.UPWIND_CFL_MAX:
        raise StabilityError(f"upwind transport CFL {cfl:.3f} exceeds {config.UPWIND_CFL_MAX}",
                             cfl=cfl, limit=config.UPWIND_CFL_MAX)
    right = np.roll(values, -1, axis=axis)
    # interface flux at i + 1/2 in units of dx / tau
    flux = np.maximum(courant, 0.0) * values + np.minimum(courant, 0.0) * right
    return values - (flux - np.roll(flux, 1, axis=axis))


def _shift_spectral(values: np.ndarray, velocity: np.ndarray, tau: float,
                    sgrid: SpatialGrid, axis: int) -> np.ndarray:
    k = 2.0 * np.pi * np.fft.rfftfreq(sgrid.n_cells, d=sgrid.dx)
    shape = [1] * values.ndim
    shape[axis] = k.size
    phase = np.exp(-1j * k.reshape(shape) * velocity * tau)
    coeffs = np.fft.rfft(values, axis=axis)
    return np.fft.irfft(coeffs * phase, n=sgrid.n_cells, axis=axis)


_TRANSPORT = {
    "semi_lagrangian": _shift_semi_lagrangian,
    "upwind": _shift_upwind,
    "spectral": _shift_spectral,
}


# ----------------- Solver -----------------

class KineticSolver:
    """Picard-iterated split stepper bound to one pair of grids"""

    def __init__(self, cfg: SolverConfig, sgrid: SpatialGrid, agrid: AngularGrid):
        if not agrid.spectral:
            raise DomainError("the kinetic solver runs on the circle of directions (d = 2)")
        self.cfg = cfg
        self.sgrid = sgrid
        self.agrid = agrid
        self.kernel = KernelSpec.build(cfg.kernel_family, sgrid, cfg.kernel_width)
        self.factors = _exponential_factors(cfg.mu, cfg.dt, agrid)
        self._admissibility_warned = False
        undershoot = equilibrium_undershoot(cfg.mu, cfg.nu, agrid)
        if undershoot > config.POSITIVITY_TOL:
            logger.warning(f"n_theta = {agrid.n_nodes} under-resolves the equilibrium at mu = {cfg.mu} "
                           f"(interpolant dips to -{undershoot:.2e} of its peak); "
                           f"steps may lose positivity")

    # --- substeps ---

    def transport(self, values: np.ndarray, tau: float) -> np.ndarray:
        shift = _TRANSPORT[self.cfg.transport]
        for axis in range(self.sgrid.dim):
            values = shift(values, _axis_velocity(self.agrid, axis), tau, self.sgrid, axis)
        return values

    def _force_hat(self, values: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Fourier coefficients of -d/dtheta(g f)"""
        k = self.agrid.wavenumbers
        multiplier = -1j * k
        multiplier[-1] = 0.0
        return multiplier * np.fft.rfft(g * values, axis=-1)

    def angular_step(self, values: np.ndarray, director: np.ndarray) -> np.ndarray:
        n = self.agrid.n_nodes
        if self.cfg.nu.is_zero or not np.any(director):
            return np.fft.irfft(self.factors.decay * np.fft.rfft(values, axis=-1), n=n, axis=-1)

        g = _tangential_force(director, self.cfg.nu, self.agrid)
        cfl = self.cfg.dt * float(np.max(np.abs(g))) * self.agrid.k_max
        if cfl > config.ANGULAR_CFL_MAX:
            raise StabilityError(
                f"angular advection CFL {cfl:.3f} exceeds {config.ANGULAR_CFL_MAX} "
                f"(dt = {self.cfg.dt}, n_theta = {n})", cfl=cfl, limit=config.ANGULAR_CFL_MAX)

        decay, phi1, phi2 = self.factors
        values_hat = np.fft.rfft(values, axis=-1)
        force_hat = self._force_hat(values, g)
        stage_hat = decay * values_hat + phi1 * force_hat
        stage = np.fft.irfft(stage_hat, n=n, axis=-1)
        new_hat = stage_hat + phi2 * (self._force_hat(stage, g) - force_hat)
        return np.fft.irfft(new_hat, n=n, axis=-1)

    def linear_step(self, f: DistributionField, frozen: MomentField) -> DistributionField:
        """Advance f by dt with the director held at `frozen`"""
        director = np.asarray(frozen.director, dtype=float)
        if director.shape == (self.agrid.dim,):
            director = np.broadcast_to(director, self.sgrid.shape + (self.agrid.dim,))
        if np.any(np.linalg.norm(director, axis=-1) > 1.0 + config.DIRECTION_INPUT_TOL):
            raise DomainError("frozen director must satisfy |Omega| <= 1 in every cell")
        half = 0.5 * self.cfg.dt
        values = self.transport(np.asarray(f.values), half)
        values = self.angular_step(values, director)
        values = self.transport(values, half)
        return f.evolved(values, f.time + self.cfg.dt)

    # --- nonlinear step ---

    def picard_tolerance(self, f: DistributionField) -> float:
        if self.cfg.picard_tol is not None:
            return self.cfg.picard_tol
        return config.PICARD_REL_TOL * max(abs(f.mass), np.finfo(float).tiny)

    def moments(self, f: DistributionField) -> MomentField:
        return director_eps(flux_J(f, self.kernel), self.cfg.eps)

    def picard_step(self, f_prev: DistributionField) -> PicardOutcome:
        """Nonlinear regularised step from f_prev by frozen-director iteration"""
        if self.cfg.nu.is_zero:
            frozen = MomentField.from_director(np.zeros(self.sgrid.shape + (self.agrid.dim,)))
            return PicardOutcome(self.check_positivity(self.linear_step(f_prev, frozen)), 1, [0.0], frozen)

        tol = self.picard_tolerance(f_prev)
        iterate = f_prev
        residuals: List[float] = []
        for k in range(1, self.cfg.picard_max_iter + 1):
            frozen = self.moments(iterate)
            candidate = self.linear_step(f_prev, frozen)
            if not np.all(np.isfinite(candidate.values)):
                self._abort(candidate, k)
            residuals.append(l1_distance(candidate, iterate))
            iterate = candidate
            if residuals[-1] < tol:
                break
        else:
            logger.warning(f"Picard did not converge at t = {iterate.time:.6g}: "
                           f"residual {residuals[-1]:.3e} after {k} iterations (tol {tol:.3e})")
        logger.debug(f"Picard t = {iterate.time:.6g}: {k} iterations, residuals {residuals}")
        return PicardOutcome(self.check_positivity(iterate), k, residuals, frozen)

    def check_positivity(self, f: DistributionField) -> DistributionField:
        """Raise StabilityError when min f < -POSITIVITY_TOL max|f|"""
        peak = float(np.max(np.abs(f.values)))
        low = float(np.min(f.values))
        if low < -config.POSITIVITY_TOL * peak:
            depth = -low / peak
            logger.error(f"Positivity lost at t = {f.time:.6g}: min f = {low:.3e}")
            raise StabilityError(
                f"density went negative at t = {f.time:.6g} (min f = {low:.3e}, {depth:.2e} of max|f|); "
                f"raise n_theta (now {self.agrid.n_nodes}) or reduce dt", cfl=depth,
                limit=config.POSITIVITY_TOL)
        return f

    def _abort(self, bad: DistributionField, iteration: int):
        from src.snapshot_io import save_field

        dump = config.DUMP_DIR / f"divergence_t{bad.time:.6f}_k{iteration}.vkf"
        try:
            save_field(bad, dump, extra={"reason": "non-finite Picard iterate", "iteration": iteration})
        except OSError as e:
            logger.error(f"Could not write divergence dump {dump}: {e}")
            dump = None
        logger.error(f"Non-finite values in Picard iterate {iteration} at t = {bad.time:.6g}; dump: {dump}")
        raise SolverDivergenceError(f"non-finite values at t = {bad.time:.6g}", dump_path=dump)

    # --- diagnostics ---

    def report(self, f: DistributionField, iterations: int = 0,
               residuals: Sequence[float] = ()) -> StepReport:
        orders = sorted(set(self.cfg.p_list) | {1.0, 2.0, math.inf})
        min_abs_J = flux_J(f, self.kernel).min_speed
        if min_abs_J < self.cfg.alpha:
            if not self._admissibility_warned:
                logger.warning(f"min|J| = {min_abs_J:.4g} fell below alpha = {self.cfg.alpha} "
                               f"at t = {f.time:.6g}")
                self._admissibility_warned = True
        return StepReport(
            time=f.time,
            mass=f.mass,
            norms={p: lp_norm(f, p) for p in orders},
            angular_energy_p2=angular_energy(f, 2.0),
            min_abs_J=min_abs_J,
            picard_iters=iterations,
            picard_residual=residuals[-1] if residuals else 0.0,
            residuals=list(residuals),
        )

    def evolve(self, f0: DistributionField, snapshot_every: int = 0,
               snapshot_dir: Optional[Path] = None) -> EvolveResult:
        """Advance f0 to t_final, one StepReport per step (index 0 is the initial state)"""
        from src.snapshot_io import save_field

        if f0.sgrid != self.sgrid or not f0.agrid.same_as(self.agrid):
            raise GridMismatchError("initial field and solver are built on different grids")
        n_steps = self.cfg.n_steps
        logger.info(f"Evolving {self.sgrid.shape} x {self.agrid.n_nodes} grid for {n_steps} steps "
                    f"(dt = {self.cfg.dt}, mu = {self.cfg.mu}, eps = {self.cfg.eps}, "
                    f"transport = {self.cfg.transport})")

        snapshots: List[Path] = []
        reports = [self.report(f0)]
        f = f0
        for step in range(1, n_steps + 1):
            outcome = self.picard_step(f)
            f = outcome.field.evolved(outcome.field.values, f0.time + step * self.cfg.dt)
            reports.append(self.report(f, outcome.iterations, outcome.residuals))
            if snapshot_every and snapshot_dir is not None and step % snapshot_every == 0:
                path = Path(snapshot_dir) / f"snapshot_{step:06d}.vkf"
                save_field(f, path)
                snapshots.append(path)

        drift = abs(f.mass - f0.mass) / max(abs(f0.mass), np.finfo(float).tiny)
        logger.info(f"Finished at t = {f.time:.6g}: relative mass drift {drift:.3e}, "
                    f"max Picard iterations {max(r.picard_iters for r in reports)}")
        return EvolveResult(reports, f, snapshots)


# ----------------- Functional API -----------------

def linear_step(f: DistributionField, frozen: MomentField, cfg: SolverConfig) -> DistributionField:
    return KineticSolver(cfg, f.sgrid, f.agrid).linear_step(f, frozen)


def picard_solve(f_prev: DistributionField, cfg: SolverConfig) -> Tuple[DistributionField, int]:
    outcome = KineticSolver(cfg, f_prev.sgrid, f_prev.agrid).picard_step(f_prev)
    return outcome.field, outcome.iterations


def evolve(f0: DistributionField, cfg: SolverConfig, snapshot_every: int = 0,
           snapshot_dir: Optional[Path] = None) -> EvolveResult:
    return KineticSolver(cfg, f0.sgrid, f0.agrid).evolve(f0, snapshot_every, snapshot_dir)


def write_reports_csv(reports: Sequence[StepReport], path: Path) -> Path:
    """One row per StepReport with the standard columns"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=config.STEP_REPORT_COLUMNS)
        writer.writeheader()
        for report in reports:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in report.to_row().items()})
    return path
