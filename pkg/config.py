"""
Configuration file for vicsek-kinetics
"""
from pathlib import Path

# Base directories
PROJECT_ROOT = Path(__file__).parent
DATA_DIR = PROJECT_ROOT / "data"
LOGS_DIR = PROJECT_ROOT / "logs"
OUTPUT_DIR = DATA_DIR / "output"
BASELINE_DIR = DATA_DIR / "baselines"
DUMP_DIR = DATA_DIR / "dumps"

# Create directories if they don't exist
for dir_path in [DATA_DIR, LOGS_DIR, OUTPUT_DIR, BASELINE_DIR, DUMP_DIR]:
    dir_path.mkdir(parents=True, exist_ok=True)

# Sphere calculus
UNIT_NORM_TOL = 1e-12  # |omega| = 1 for stored directions
DIRECTION_INPUT_TOL = 1e-10  # accepted slack on directions passed by callers
TANGENT_TOL = 1e-10  # value . node for tangent fields
GAUSS_LEGENDRE_NODES = 128  # polar nodes in u = cos(theta) for S^2 quadrature
SPHERE_AZIMUTH_NODES = 64
REFERENCE_CIRCLE_NODES = 1024  # default S^1 grid for FvM normalisation

# Model defaults
DEFAULT_NU0 = 1.0
DEFAULT_EPS = 1e-6
DEFAULT_ALPHA = 0.1  # admissibility threshold, reported never enforced
SIGMA_FD_STEP = 1e-5  # finite-difference step for sigma' = nu checks
FLUX_ROUNDOFF_ULPS = 64  # |J| <= ULPS * machine eps * local mass is flushed to zero

# Kinetic solver
DEFAULT_MU = 0.2
DEFAULT_DT = 1e-3
DEFAULT_T_FINAL = 1.0
DEFAULT_N_X = 32
DEFAULT_N_THETA = 64
DEFAULT_LENGTH = 1.0
PICARD_REL_TOL = 1e-10  # picard_tol default = PICARD_REL_TOL * mass
PICARD_MAX_ITER = 20
DEFAULT_P_LIST = (1.0, 2.0, float("inf"))
TRANSPORT_SCHEMES = ("semi_lagrangian", "upwind", "spectral")
DEFAULT_TRANSPORT = "semi_lagrangian"
UPWIND_CFL_MAX = 1.0
ANGULAR_CFL_MAX = 1.0  # dt * max|psi_1| * k_max
POSITIVITY_TOL = 1e-10  # min f >= -POSITIVITY_TOL * max|f| after every step
RESOLUTION_REFINE = 4  # oversampling of the equilibrium interpolant in the resolution check

# Particle simulator
DEFAULT_RADIUS = 0.1
DEFAULT_N_PARTICLES = 10000
SMALL_ANGLE_LIMIT = 0.3  # warn when sqrt(2 mu dt) exceeds this
TIE_POLICIES = ("keep", "random")

# Experiments
BASELINE_RTOL = 0.10
BOUND_SLACK = 1e-10  # relative slack before an L^p envelope counts as violated
STEP_REPORT_COLUMNS = [
    "time", "mass", "l1", "l2", "linf", "angular_energy_p2",
    "min_abs_J", "picard_iters", "picard_residual",
]
PARTICLE_SUMMARY_COLUMNS = [
    "time", "order_parameter", "mean_abs_Jbar", "mean_alignment", "mean_neighbors",
]

# Logging Configuration
LOG_LEVEL = "INFO"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FILE = LOGS_DIR / "vicsek_kinetics.log"
LOG_MAX_SIZE = 10 * 1024 * 1024  # 10MB
LOG_BACKUP_COUNT = 5

# Process lock
LOCK_FILE_NAME = ".vicsek_kinetics.lock"
