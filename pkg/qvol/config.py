from pathlib import Path

# Base paths
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = BASE_DIR / "data"
RUNS_DIR = DATA_DIR / "runs"

# Series truncation
EPS = 1e-14
POLE_TOLERANCE = 1e-8

# Kernel quadrature
KERNEL_NODES = 512
KERNEL_TOLERANCE = 1e-10
KERNEL_MAX_NODES = 2048

# Moment quadrature (nodes per ratio circle)
MOMENT_NODES = 64
MOMENT_TOLERANCE = 1e-9
MOMENT_MAX_GRID_POINTS = 1 << 22

# Smallest --nodes accepted for either quadrature
MIN_NODES = 8

# Covariance quadrature
COVARIANCE_NODES = 256
GREENS_LEVELS = 8
GREENS_TOLERANCE = 1e-10
TANH_SINH_RANGE = 3.0

# Exact layer
MAX_STATES = 5000
MAX_CONFIGS = 10_000_000
SHIFT_TOLERANCE = 1e-12
TAIL_TARGET = 1e-4

# Sampling
DEFAULT_N = 8
DEFAULT_T = 0.5
DEFAULT_U = 1.0
DEFAULT_SWEEPS = 20_000
DEFAULT_BURN_IN = 2_000
DEFAULT_THIN = 10
DEFAULT_SEED = 7
BOX_FACTOR = 6
BOUNDARY_OCCUPANCY_WARNING = 1e-3
FROZEN_TAIL_TOLERANCE = 1e-3

# Statistics
BATCHES = 32
NORMALITY_Z_LIMIT = 4.0
CHI_SQUARE_LEVEL = 0.99
MIN_EXPECTED_COUNT = 5.0

# Output
FLOAT_FORMAT = "{:.17g}"
CONFIG_FILE_NAME = "config.yaml"
