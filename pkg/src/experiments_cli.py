"""
Experiments CLI Module
Reproducible experiment recipes driven by flat key = value config files,
writing CSV tables, a JSON summary and the fully resolved config per run.
"""
import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from filelock import FileLock, Timeout

import config
from src.errors import ConfigError, VicsekError
from src.fields import DistributionField, SpatialGrid
from src.initial_conditions import IC_RECIPES, build_initial_condition
from src.kinetic_solver import (
    KineticSolver, SolverConfig, StepReport, bound_envelope, dissipation_lhs, l1_distance,
    l2_distance, write_reports_csv,
)
from src.model import (
    FREQUENCY_FAMILIES, KERNEL_FAMILIES, FrequencySpec, FvMState, bessel_order, c_of_mu,
    c_of_mu_circle, fvm_on_grid, flux_J, growth_constant, langevin_order,
)
from src.particle_sim import (
    SimParams, empirical_density, order_parameter, sample_from_field, sde_step, simulate,
)
from src.snapshot_io import save_ensemble, save_field
from src.sphere_calculus import AngularGrid, Direction
from src.utils import content_hash, enable_console_logging, get_system_info, setup_logger

logger = setup_logger(__name__)

SUBCOMMANDS = ("run-pde", "run-particles", "equilibria", "bounds", "eps-study", "stability",
               "meanfield-compare")


# ----------------- Config registry -----------------

def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(cast: Callable[[str], Any]) -> Callable[[str], List[Any]]:
    def parse(text: str) -> List[Any]:
        return [cast(item.strip()) for item in text.split(",") if item.strip()]
    return parse


def _parse_optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _parse_optional_path(text: str) -> Optional[Path]:
    return Path(text.strip()) if text.strip() else None


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class ConfigKey:
    parse: Callable[[str], Any]
    default: Any
    choices: Optional[Sequence[str]] = None


_floats = _parse_list(float)
_ints = _parse_list(int)

REGISTRY: Dict[str, ConfigKey] = {
    "experiment": ConfigKey(str, "run-pde", SUBCOMMANDS),
    "mu": ConfigKey(float, config.DEFAULT_MU),
    "eps": ConfigKey(float, config.DEFAULT_EPS),
    "dt": ConfigKey(float, config.DEFAULT_DT),
    "t_final": ConfigKey(float, config.DEFAULT_T_FINAL),
    "picard_tol": ConfigKey(_parse_optional_float, None),
    "picard_max_iter": ConfigKey(int, config.PICARD_MAX_ITER),
    "p_list": ConfigKey(_floats, list(config.DEFAULT_P_LIST)),
    "alpha": ConfigKey(float, config.DEFAULT_ALPHA),
    "nu_family": ConfigKey(str, "constant", FREQUENCY_FAMILIES),
    "nu0": ConfigKey(float, config.DEFAULT_NU0),
    "nu_a": ConfigKey(float, 1.0),
    "nu_b": ConfigKey(float, 0.5),
    "nu_table": ConfigKey(_floats, []),
    "kernel_family": ConfigKey(str, "dirac", KERNEL_FAMILIES),
    "kernel_width": ConfigKey(float, 0.0),
    "transport": ConfigKey(str, config.DEFAULT_TRANSPORT, config.TRANSPORT_SCHEMES),
    "x_dim": ConfigKey(int, 1),
    "n_x": ConfigKey(int, config.DEFAULT_N_X),
    "length": ConfigKey(float, config.DEFAULT_LENGTH),
    "n_theta": ConfigKey(int, config.DEFAULT_N_THETA),
    "ic": ConfigKey(str, "perturbed_fvm", IC_RECIPES),
    "ic_rho": ConfigKey(float, 1.0),
    "ic_angle": ConfigKey(float, 0.0),
    "ic_modes": ConfigKey(_floats, [0.1]),
    "ic_mu": ConfigKey(_parse_optional_float, None),
    "ic_file": ConfigKey(_parse_optional_path, None),
    "snapshot_every": ConfigKey(int, 0),
    "out_dir": ConfigKey(_parse_optional_path, None),
    "seed": ConfigKey(int, 0),
    "n_particles": ConfigKey(int, config.DEFAULT_N_PARTICLES),
    "radius": ConfigKey(float, config.DEFAULT_RADIUS),
    "tie_policy": ConfigKey(str, "keep", config.TIE_POLICIES),
    "record_every": ConfigKey(int, 10),
    "mu_grid": ConfigKey(_floats, [0.1, 0.2, 0.5, 1.0, 2.0, 10.0]),
    "eps_ladder": ConfigKey(_floats, [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]),
    "n_ladder": ConfigKey(_ints, [1000, 10000, 100000]),
    "checkpoints": ConfigKey(_floats, [0.5]),
    "delta": ConfigKey(float, 1e-3),
    "refine": ConfigKey(_parse_bool, True),
    "bandwidth": ConfigKey(float, 0.0),
    "rate_floor": ConfigKey(float, 0.1),
    "relax_t_final": ConfigKey(float, 10.0),
}


def _coerce(key: str, raw: Any, where: str) -> Any:
    spec = REGISTRY[key]
    try:
        value = spec.parse(raw) if isinstance(raw, str) else raw
    except ValueError as e:
        raise ConfigError(f"{where}: cannot parse {key} = {raw!r}: {e}")
    if spec.choices is not None and value not in spec.choices:
        raise ConfigError(f"{where}: {key} must be one of {list(spec.choices)}, got {value!r}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Every registry key resolved to a typed value"""

    values: Dict[str, Any]
    source: Optional[Path] = None

    def __getattr__(self, name: str) -> Any:
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def resolved_text(self) -> str:
        header = f"# resolved from {self.source}\n" if self.source else "# resolved from defaults\n"
        return header + "".join(f"{key} = {_format(self.values[key])}\n" for key in REGISTRY)

    def _ic_bytes(self) -> List[bytes]:
        if self.ic == "file" and self.ic_file is not None and Path(self.ic_file).is_file():
            return [Path(self.ic_file).read_bytes()]
        return []

    def input_hash(self) -> str:
        return content_hash([self.resolved_text().encode("utf-8")] + self._ic_bytes())

    def baseline_hash(self) -> str:
        """Hash of the values that shape results; source path, out_dir and ic_file path are left out"""
        text = "".join(f"{key} = {_format(self.values[key])}\n" for key in REGISTRY
                       if key not in ("out_dir", "ic_file"))
        return content_hash([text.encode("utf-8")] + self._ic_bytes())

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir) if self.out_dir else config.OUTPUT_DIR / self.experiment

    def with_values(self, **changes) -> "ExperimentConfig":
        values = dict(self.values)
        for key, value in changes.items():
            values[key] = _coerce(key, value, "override")
        return ExperimentConfig(values, self.source)

    # --- builders ---

    def frequency(self) -> FrequencySpec:
        if self.nu_family == "constant":
            return FrequencySpec.constant(self.nu0)
        if self.nu_family == "affine":
            return FrequencySpec.affine(self.nu_a, self.nu_b)
        return FrequencySpec.tabulated(self.nu_table)

    def spatial_grid(self) -> SpatialGrid:
        return SpatialGrid(self.x_dim, self.n_x, self.length)

    def angular_grid(self) -> AngularGrid:
        return AngularGrid.circle(self.n_theta)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            mu=self.mu, eps=self.eps, dt=self.dt, t_final=self.t_final,
            picard_tol=self.picard_tol, picard_max_iter=self.picard_max_iter,
            p_list=tuple(self.p_list), alpha=self.alpha, nu=self.frequency(),
            kernel_family=self.kernel_family, kernel_width=self.kernel_width,
            transport=self.transport,
        )

    def sim_params(self) -> SimParams:
        return SimParams(self.radius, self.mu, self.dt, self.frequency(), self.tie_policy)

    def initial_field(self, sgrid: Optional[SpatialGrid] = None,
                      agrid: Optional[AngularGrid] = None) -> DistributionField:
        return build_initial_condition(
            self.ic, sgrid or self.spatial_grid(), agrid or self.angular_grid(),
            rho=self.ic_rho, angle=self.ic_angle,
            mu=self.ic_mu if self.ic_mu is not None else self.mu,
            nu=self.frequency(), modes=self.ic_modes, path=self.ic_file)


def parse_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a flat key = value file; unknown or repeated keys are errors"""
    values = {key: spec.default for key, spec in REGISTRY.items()}
    seen = set()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for number, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in REGISTRY:
                raise ConfigError(f"{path}:{number}: unknown key {key!r}")
            if key in seen:
                raise ConfigError(f"{path}:{number}: duplicate key {key!r}")
            seen.add(key)
            values[key] = _coerce(key, raw, f"{path}:{number}")
    for key, raw in (overrides or {}).items():
        if key not in REGISTRY:
            raise ConfigError(f"unknown override {key!r}")
        values[key] = _coerce(key, raw, "override")
    return ExperimentConfig(values, path)


# ----------------- Reports & baselines -----------------

@dataclass
class ExperimentReport:
    name: str
    tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    baseline: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[Path] = field(default_factory=list)


def _cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer, np.bool_)):
        return value.item()
    return value


def write_table(rows: Sequence[Dict[str, Any]], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        if rows:
            writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _cell(v) for k, v in row.items()})
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer, np.floating, np.bool_)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def write_report(report: ExperimentReport, cfg: ExperimentConfig) -> Path:
    """CSV per table, resolved_config.txt and <name>_summary.json under cfg.out_path"""
    out = cfg.out_path
    out.mkdir(parents=True, exist_ok=True)
    resolved = out / "resolved_config.txt"
    resolved.write_text(cfg.resolved_text())
    tables = [write_table(rows, out / f"{report.name}_{table}.csv") for table, rows in report.tables.items()]
    summary_path = out / f"{report.name}_summary.json"
    document = {
        "experiment": report.name,
        "summary": report.summary,
        "tables": [p.name for p in tables],
        "artifacts": [str(p) for p in report.artifacts],
        "input_hash": cfg.input_hash(),
        "resolved_config": cfg.resolved_text(),
        "host": get_system_info(),
    }
    summary_path.write_text(json.dumps(_jsonable(document), indent=2))
    for path in tables + [resolved, summary_path]:
        logger.info(f"Wrote {path}")
    return summary_path


def baseline_path(name: str) -> Path:
    return config.BASELINE_DIR / f"{name}.json"


def record_baseline(name: str, metrics: Dict[str, Any], input_hash: str) -> Path:
    path = baseline_path(name)
    with FileLock(str(path) + ".lock"):
        path.write_text(json.dumps(_jsonable({"input_hash": input_hash, "metrics": metrics}), indent=2))
    logger.info(f"Recorded baseline {path}")
    return path


def _close(actual: float, expected: float, rtol: float) -> bool:
    return abs(actual - expected) <= rtol * max(abs(expected), 1e-300)


def compare_baseline(name: str, metrics: Dict[str, Any], input_hash: Optional[str] = None,
                     rtol: float = config.BASELINE_RTOL) -> Optional[List[str]]:
    """Differences beyond rtol against the recorded baseline

    None when nothing is recorded, or when the baseline was recorded for
    other inputs than `input_hash`.
    """
    path = baseline_path(name)
    if not path.is_file():
        logger.info(f"No baseline recorded for {name}")
        return None
    with FileLock(str(path) + ".lock"):
        stored = json.loads(path.read_text())
    if input_hash is not None and stored.get("input_hash") != input_hash:
        logger.info(f"Baseline {path} was recorded for different inputs; not compared")
        return None
    recorded = stored["metrics"]
    problems = []
    for key, expected in recorded.items():
        if key not in metrics:
            problems.append(f"{key}: missing from this run")
            continue
        actual = metrics[key]
        if isinstance(expected, list):
            if not isinstance(actual, (list, tuple)) or len(actual) != len(expected):
                problems.append(f"{key}: expected {len(expected)} values, got {actual}")
            elif not all(_close(a, e, rtol) for a, e in zip(actual, expected)):
                problems.append(f"{key}: {list(actual)} differs from {expected}")
        elif isinstance(expected, bool) or isinstance(expected, str):
            if actual != expected:
                problems.append(f"{key}: {actual!r} != {expected!r}")
        elif not _close(float(actual), float(expected), rtol):
            problems.append(f"{key}: {actual!r} differs from {expected!r} by more than {rtol:.0%}")
    return problems


# ----------------- Recipes -----------------

def _monotone_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _reports_table(reports: Sequence[StepReport]) -> List[Dict[str, Any]]:
    return [r.to_row() for r in reports]


def run_pde(cfg: ExperimentConfig) -> ExperimentReport:
    f0 = cfg.initial_field()
    solver = KineticSolver(cfg.solver_config(), f0.sgrid, f0.agrid)
    result = solver.evolve(f0, cfg.snapshot_every, cfg.out_path / "snapshots")
    final = save_field(result.final, cfg.out_path / "final.vkf")
    steps_csv = write_reports_csv(result.reports, cfg.out_path / "run_pde_steps.csv")

    steps = result.reports[1:]
    drift = abs(result.final.mass - f0.mass) / f0.mass
    min_f = float(np.min(result.final.values))
    summary = {
        "t_final": result.final.time,
        "steps": len(steps),
        "relative_mass_drift": drift,
        "min_f": min_f,
        "positivity_ok": min_f >= -1e-10 * float(np.max(np.abs(result.final.values))),
        "max_picard_iters": max(r.picard_iters for r in steps),
        "picard_monotone": all(_monotone_decreasing(r.residuals) for r in steps),
        "min_abs_J": min(r.min_abs_J for r in result.reports),
        "admissible": min(r.min_abs_J for r in result.reports) >= cfg.alpha,
    }
    baseline = {
        "first_step_residual": steps[0].residuals[0],
        "final_l2": steps[-1].norms[2.0],
        "max_picard_iters": summary["max_picard_iters"],
    }
    return ExperimentReport("run_pde", {}, summary, baseline, [steps_csv, final] + result.snapshots)


def run_particles(cfg: ExperimentConfig) -> ExperimentReport:
    f0 = cfg.initial_field()
    ens = sample_from_field(f0, cfg.n_particles, cfg.seed)
    params = cfg.sim_params()
    final, rows = simulate(ens, params, cfg.t_final, cfg.record_every)
    snapshot = save_ensemble(final, cfg.out_path / "final_ensemble.vkp", params.to_dict())
    norm_error = float(np.max(np.abs(np.linalg.norm(final.directions, axis=1) - 1.0)))
    summary = {
        "n_particles": final.n,
        "t_final": final.time,
        "order_parameter": order_parameter(final),
        "max_unit_norm_error": norm_error,
    }
    return ExperimentReport("run_particles", {"summary": rows}, summary,
                            {"order_parameter": summary["order_parameter"]}, [snapshot])


def _march(solver: KineticSolver, f: DistributionField, n_steps: int,
           observe: Callable[[int, DistributionField], None]) -> DistributionField:
    observe(0, f)
    t0 = f.time
    for step in range(1, n_steps + 1):
        outcome = solver.picard_step(f)
        f = outcome.field.evolved(outcome.field.values, t0 + step * solver.cfg.dt)
        observe(step, f)
    return f


def run_equilibria(cfg: ExperimentConfig) -> ExperimentReport:
    nu = cfg.frequency()
    order_rows = []
    for mu in cfg.mu_grid:
        row = {"mu": mu, "c_sphere": c_of_mu(mu, nu), "c_circle": c_of_mu_circle(mu, nu)}
        if nu.family == "constant" and not nu.is_zero:
            row["c_sphere_closed_form"] = langevin_order(mu, cfg.nu0)
            row["c_circle_closed_form"] = bessel_order(mu, cfg.nu0)
            row["sphere_error"] = abs(row["c_sphere"] - row["c_sphere_closed_form"])
            row["circle_error"] = abs(row["c_circle"] - row["c_circle_closed_form"])
        order_rows.append(row)

    # space-homogeneous relaxation from angularly perturbed equilibrium data
    sgrid = SpatialGrid(1, 1, cfg.length)
    agrid = cfg.angular_grid()
    relax = cfg.with_values(t_final=cfg.relax_t_final, kernel_family="dirac")
    f0 = build_initial_condition("angular_perturbed_fvm", sgrid, agrid, rho=cfg.ic_rho, angle=cfg.ic_angle,
                                 mu=cfg.mu, nu=nu, modes=cfg.ic_modes)
    relax_cfg = relax.solver_config()
    solver = KineticSolver(relax_cfg, sgrid, agrid)
    c_circle = c_of_mu_circle(cfg.mu, nu)
    relax_rows = []

    def distance_to_equilibrium(f: DistributionField):
        flux = flux_J(f, solver.kernel).flux.reshape(-1, 2)[0]
        rho = float(f.spatial_density.ravel()[0])
        target = fvm_on_grid(FvMState(rho, Direction.from_vector(flux), cfg.mu), nu, agrid)
        equilibrium = f.evolved(np.broadcast_to(target, f.values.shape), f.time)
        return l2_distance(f, equilibrium), abs(float(np.linalg.norm(flux)) - rho * c_circle)

    def observe(step: int, f: DistributionField):
        if step % max(cfg.record_every, 1) == 0 or step == relax_cfg.n_steps:
            distance, speed_gap = distance_to_equilibrium(f)
            relax_rows.append({"time": f.time, "l2_to_equilibrium": distance, "speed_gap": speed_gap})

    _march(solver, f0, relax_cfg.n_steps, observe)
    final_distance = relax_rows[-1]["l2_to_equilibrium"]
    summary = {
        "mu": cfg.mu,
        "c_sphere_at_mu": c_of_mu(cfg.mu, nu),
        "c_circle_at_mu": c_circle,
        "final_l2_to_equilibrium": final_distance,
        "final_speed_gap": relax_rows[-1]["speed_gap"],
        "relaxed": final_distance < 1e-3,
    }
    if "sphere_error" in order_rows[0]:
        summary["max_sphere_error"] = max(r["sphere_error"] for r in order_rows)
        summary["max_circle_error"] = max(r["circle_error"] for r in order_rows)
    baseline = {"final_l2_to_equilibrium": final_distance,
                "c_sphere": [r["c_sphere"] for r in order_rows]}
    return ExperimentReport("equilibria", {"order_parameter": order_rows, "relaxation": relax_rows},
                            summary, baseline)


def run_bounds(cfg: ExperimentConfig) -> ExperimentReport:
    f0 = cfg.initial_field()
    solver_cfg = cfg.solver_config()
    solver = KineticSolver(solver_cfg, f0.sgrid, f0.agrid)
    result = solver.evolve(f0)
    C = growth_constant(solver_cfg.nu, f0.agrid.dim)
    initial = result.reports[0]

    rows = []
    violations = {p: 0 for p in solver_cfg.p_list}
    worst_ratio = {p: 0.0 for p in solver_cfg.p_list}
    energy_integral = 0.0
    previous = initial
    for report in result.reports:
        energy_integral += 0.5 * (report.time - previous.time) * (report.angular_energy_p2
                                                                 + previous.angular_energy_p2)
        previous = report
        for p in solver_cfg.p_list:
            bound = bound_envelope(p, C, report.time - initial.time) * initial.norms[p]
            norm = report.norms[p]
            violated = norm > bound * (1.0 + config.BOUND_SLACK)
            violations[p] += int(violated)
            worst_ratio[p] = max(worst_ratio[p], norm / bound if bound > 0 else 0.0)
            row = {"time": report.time, "p": p, "norm": norm, "bound": bound, "violated": violated}
            if p == 2.0:
                row["dissipation_lhs"] = dissipation_lhs(norm, energy_integral, p, solver_cfg.mu)
            else:
                row["dissipation_lhs"] = float("nan")
            rows.append(row)

    summary = {
        "growth_constant": C,
        "violations": {_format(p): n for p, n in violations.items()},
        "max_norm_to_bound": {_format(p): r for p, r in worst_ratio.items()},
        "envelope_respected": not any(violations.values()),
    }
    baseline = {"final_norms": [result.reports[-1].norms[p] for p in solver_cfg.p_list]}
    return ExperimentReport("bounds", {"norms": rows, "steps": _reports_table(result.reports)}, summary, baseline)


def _flux_l2_difference(a: np.ndarray, b: np.ndarray, sgrid: SpatialGrid) -> float:
    return float(np.sqrt(np.sum((a - b) ** 2) * sgrid.cell_volume))


def run_eps_study(cfg: ExperimentConfig) -> ExperimentReport:
    f0 = cfg.initial_field()
    run_rows, finals, fluxes = [], [], []
    for eps in cfg.eps_ladder:
        solver = KineticSolver(cfg.with_values(eps=eps).solver_config(), f0.sgrid, f0.agrid)
        result = solver.evolve(f0)
        min_abs_J = min(r.min_abs_J for r in result.reports)
        finals.append(result.final)
        fluxes.append(flux_J(result.final, solver.kernel).flux)
        run_rows.append({
            "eps": eps, "min_abs_J": min_abs_J, "admissible": min_abs_J >= cfg.alpha,
            "final_mass": result.final.mass,
            "max_picard_iters": max(r.picard_iters for r in result.reports[1:]),
        })

    pair_rows = []
    for i in range(len(finals) - 1):
        pair_rows.append({
            "eps": cfg.eps_ladder[i], "eps_next": cfg.eps_ladder[i + 1],
            "J_l2_difference": _flux_l2_difference(fluxes[i], fluxes[i + 1], f0.sgrid),
            "f_l1_difference": l1_distance(finals[i], finals[i + 1]),
        })

    admissible = all(r["admissible"] for r in run_rows)
    if not admissible:
        logger.warning(f"eps study left the admissible class: min|J| below alpha = {cfg.alpha} in some run")
    j_diffs = [r["J_l2_difference"] for r in pair_rows]
    f_diffs = [r["f_l1_difference"] for r in pair_rows]
    summary = {
        "admissible": admissible,
        "admissibility_breach": not admissible,
        "J_differences_monotone": _monotone_decreasing(j_diffs) or all(d == 0.0 for d in j_diffs),
        "f_differences_monotone": _monotone_decreasing(f_diffs) or all(d == 0.0 for d in f_diffs),
        "last_pair_f_l1": f_diffs[-1] if f_diffs else 0.0,
    }
    return ExperimentReport("eps_study", {"runs": run_rows, "pairs": pair_rows}, summary,
                            {"f_l1_differences": f_diffs})


def _perturbation(f0: DistributionField) -> np.ndarray:
    """f0 cos(2 pi x_1 / L) sin(theta), unit L^2 norm (mass neutral)"""
    x = f0.sgrid.centers()[..., 0]
    pattern = f0.values * np.cos(2.0 * np.pi * x / f0.sgrid.length)[..., None] * f0.agrid.nodes[:, 1]
    norm = float(np.sqrt(np.sum(pattern ** 2 * f0.weights)))
    if norm == 0.0:
        raise ConfigError("stability perturbation vanishes for this initial condition")
    return pattern / norm


def fitted_rate(times: Sequence[float], distances: Sequence[float], delta: float) -> float:
    """max over t > 0 of log(d(t) / delta) / t, so that d(t) <= e^{rate t} delta on the samples"""
    rates = [math.log(d / delta) / t for t, d in zip(times, distances) if t > 0 and d > 0]
    return max(rates) if rates else 0.0


def _distance_curve(cfg: ExperimentConfig) -> List[Dict[str, float]]:
    f0 = cfg.initial_field()
    g0 = f0.evolved(f0.values + cfg.delta * _perturbation(f0), f0.time) if cfg.delta > 0 else f0
    solver_cfg = cfg.solver_config()
    solver = KineticSolver(solver_cfg, f0.sgrid, f0.agrid)
    rows = []
    f, g = f0, g0
    for step in range(solver_cfg.n_steps + 1):
        if step:
            f = solver.picard_step(f).field
            g = solver.picard_step(g).field
        if step % max(cfg.record_every, 1) == 0 or step == solver_cfg.n_steps:
            rows.append({"time": f0.time + step * cfg.dt, "distance": l2_distance(f, g)})
    return rows


def run_stability(cfg: ExperimentConfig) -> ExperimentReport:
    base = _distance_curve(cfg)
    tables = {"distance": base}
    summary: Dict[str, Any] = {"delta": cfg.delta}
    if cfg.delta == 0:
        summary["identical"] = all(r["distance"] == 0.0 for r in base)
        return ExperimentReport("stability", tables, summary, {})

    rate = fitted_rate([r["time"] for r in base], [r["distance"] for r in base], cfg.delta)
    summary["fitted_rate"] = rate
    if cfg.refine:
        refinements = {"half_dt": cfg.with_values(dt=cfg.dt / 2.0)}
        if cfg.ic != "file":
            refinements["double_n_theta"] = cfg.with_values(n_theta=2 * cfg.n_theta)
        for label, refined in refinements.items():
            curve = _distance_curve(refined)
            tables[f"distance_{label}"] = curve
            refined_rate = fitted_rate([r["time"] for r in curve], [r["distance"] for r in curve], cfg.delta)
            change = abs(refined_rate - rate) / max(abs(rate), cfg.rate_floor)
            summary[f"fitted_rate_{label}"] = refined_rate
            summary[f"relative_change_{label}"] = change
            summary[f"stable_{label}"] = change <= 0.2
            summary[f"envelope_respected_{label}"] = all(
                r["distance"] <= math.exp(rate * r["time"]) * cfg.delta * (1.0 + 1e-6) for r in curve)
    return ExperimentReport("stability", tables, summary, {"fitted_rate": rate})


def run_meanfield(cfg: ExperimentConfig) -> ExperimentReport:
    sgrid, agrid = cfg.spatial_grid(), cfg.angular_grid()
    matched = cfg.with_values(kernel_family="tophat", kernel_width=cfg.radius,
                              t_final=max(cfg.checkpoints))
    f0 = matched.initial_field(sgrid, agrid)
    solver = KineticSolver(matched.solver_config(), sgrid, agrid)
    checkpoint_steps = {int(round(t / cfg.dt)): t for t in cfg.checkpoints}
    reference: Dict[int, DistributionField] = {}

    def keep(step: int, f: DistributionField):
        if step in checkpoint_steps:
            reference[step] = f

    _march(solver, f0, max(checkpoint_steps), keep)

    params = cfg.sim_params()
    rows = []
    for n in cfg.n_ladder:
        ens = sample_from_field(f0, n, cfg.seed)
        for step in range(1, max(checkpoint_steps) + 1):
            ens = sde_step(ens, params)
            if step in checkpoint_steps:
                density = empirical_density(ens, sgrid, agrid, cfg.bandwidth,
                                            mass=reference[step].mass)
                rows.append({"n": n, "time": checkpoint_steps[step],
                             "l1_distance": l1_distance(density, reference[step]),
                             "order_parameter": order_parameter(ens)})
        logger.info(f"Mean-field comparison done for N = {n}")

    last = max(cfg.checkpoints)
    final_rows = [r for r in rows if r["time"] == last]
    distances = [r["l1_distance"] for r in final_rows]
    summary: Dict[str, Any] = {"checkpoint": last, "distances": distances,
                               "decreasing": _monotone_decreasing(distances)}
    if len(final_rows) >= 2:
        slope = float(np.polyfit(np.log([r["n"] for r in final_rows]), np.log(distances), 1)[0])
        summary["loglog_slope"] = slope
        summary["slope_in_range"] = -0.7 <= slope <= -0.3
    return ExperimentReport("meanfield", {"distances": rows}, summary, {"distances": distances})


RECIPES: Dict[str, Callable[[ExperimentConfig], ExperimentReport]] = {
    "run-pde": run_pde,
    "run-particles": run_particles,
    "equilibria": run_equilibria,
    "bounds": run_bounds,
    "eps-study": run_eps_study,
    "stability": run_stability,
    "meanfield-compare": run_meanfield,
}


# ----------------- Command line -----------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value experiment file")
    common.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides seed)")
    common.add_argument("--record-baseline", action="store_true",
                        help="store this run's metrics as the regression baseline")
    common.add_argument("--verbose", "-v", action="store_true", help="log to the console as well")

    parser = argparse.ArgumentParser(
        prog="vicsek-kinetics",
        description="Kinetic alignment model laboratory: PDE solver, particle simulator, diagnostics",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  vicsek-kinetics equilibria --config configs/equilibria.cfg
  vicsek-kinetics run-pde --config configs/regression.cfg --out data/output/regression
  vicsek-kinetics stability --config configs/stability.cfg --record-baseline
        """
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} recipe")
    return parser


def run_experiment(cfg: ExperimentConfig, record: bool = False) -> ExperimentReport:
    """Run one recipe, write its artifacts and check or record its baseline"""
    logger.info(f"Starting {cfg.experiment}; host {get_system_info()}")
    report = RECIPES[cfg.experiment](cfg)
    if record:
        record_baseline(report.name, report.baseline, cfg.baseline_hash())
    elif report.baseline:
        problems = compare_baseline(report.name, report.baseline, cfg.baseline_hash())
        report.summary["baseline_problems"] = problems
        for problem in problems or []:
            logger.warning(f"Baseline mismatch in {report.name}: {problem}")
    report.artifacts.append(write_report(report, cfg))
    return report


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI function; returns the process exit status"""
    args = build_parser().parse_args(argv)
    if args.verbose:
        enable_console_logging("INFO")

    overrides: Dict[str, Any] = {"experiment": args.command}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out

    try:
        cfg = parse_config(args.config, overrides)
        out = cfg.out_path
        out.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(out / config.LOCK_FILE_NAME))
        try:
            lock.acquire(timeout=0)
        except Timeout:
            print(f"Another run is writing to {out}. Exiting.")
            return 1
        try:
            report = run_experiment(cfg, record=args.record_baseline)
        finally:
            lock.release()
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except VicsekError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1

    print(f"{report.name}: wrote {len(report.artifacts)} artifact(s) to {cfg.out_path}")
    problems = report.summary.get("baseline_problems")
    if problems:
        print(f"{report.name}: {len(problems)} baseline mismatch(es); see the log")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
