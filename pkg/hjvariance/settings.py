# Numerical defaults for hjvariance
#
# These are the values a run falls back to when the run configuration does
# not override them. Anything that changes results belongs in the run
# configuration (and therefore in the manifest), not in environment variables.

# Environment
DIMENSION = 2
LEVEL_LOW = 0.0
LEVEL_HIGH = 1.0
ALPHA = 0.5
ENVIRONMENT_SEED = 0
BOX_MARGIN = 1

# Kinetic cost K(q) = scale * |q|**exponent
KINETIC_EXPONENT = 2.0
KINETIC_SCALE = 0.5
NONDEGENERACY_EXPONENT = 3.0

# Payoff g(x) = eta . x + intercept
PAYOFF_SLOPE = (1.0, 0.0)
# Growth constant used when the linear payoff is flat
MIN_GROWTH_CONSTANT = 0.1

# Solver
TIME_STEP = 1.0
GRID_SPACING = 1.0
HORIZON = 8.0
START = (0.0, 0.0)
# Time-step range over which the finite-speed constants are certified
SPEED_TIME_STEP_RANGE = (1.0, 2.0)

# Tolerances
VALUE_TOLERANCE = 1e-9
CROSSING_EPS = 1e-12
NONDEGENERACY_RTOL = 1e-12

# Path enumeration
PATH_LIMIT = 2000
BRUTE_FORCE_PATH_LIMIT = 10**8
CYLINDER_SITE_LIMIT = 12

# Influence surveys
SHIFT_EXPONENT = 0.45
DISPLACEMENT_EXPONENT = 0.25
TUBE_RADIUS = 1
# Dependence boxes up to this many sites are scanned in full
SCAN_SITE_LIMIT = 2500
DELTA_FRACTION = 0.1
REFINEMENT_FACTOR = 10.0

# Campaigns
HORIZONS = (8.0, 16.0, 32.0, 64.0)
SAMPLES = 2000
BASE_SEED = 1
BOOTSTRAP_RESAMPLES = 10_000
BOOTSTRAP_CHUNK = 500
CONFIDENCE_LEVEL = 0.95
BUDGET_SECONDS = 1800.0
INFLUENCE_SAMPLES = 20

# First-passage percolation baseline
FPP_LEVEL_LOW = 1.0
FPP_LEVEL_HIGH = 2.0
FPP_LENGTHS = (16, 32, 64, 128)
FPP_BRUTE_FORCE_VERTICES = 25

# Shift-hash diagnostics
HASH_SIZES = (2, 4, 8, 16, 32)
HASH_RANDOM_FLIPS = 10_000

# Worker pool: tasks submitted per worker between budget checks
WORKER_CHUNK_FACTOR = 4
