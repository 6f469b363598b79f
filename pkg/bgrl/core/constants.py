"""
Shared constants for environments, solvers and the run harness
"""

# MultiGoal (repulsion) environment
MULTIGOAL_GOALS = ((-1.0, 0.0), (1.0, 0.0))
MULTIGOAL_INIT_VARIANCE = 0.1  # diagonal variance of the initial state
MULTIGOAL_ACTION_PENALTY = 30.0
MULTIGOAL_HORIZON = 20

# Deceptive point / quadruped-lite environments
DECEPTIVE_START = (0.0, 0.0)
DECEPTIVE_GOAL = (0.0, 3.0)
DECEPTIVE_WALL = ((-2.0, 1.5), (2.0, 1.5))  # horizontal segment endpoints
DECEPTIVE_HORIZON = 50
DECEPTIVE_MAX_SPEED = 0.25  # per-coordinate action clip
QUAD_LITE_HORIZON = 100
QUAD_LITE_DAMPING = 0.9
QUAD_LITE_MAX_ACCEL = 0.1

# Chain environment (imitation)
CHAIN_LENGTH = 10
CHAIN_HORIZON = 20
CHAIN_END_REWARD = 1.0
CHAIN_START_REWARD = 0.05

# Tabular generator defaults
TABULAR_STATES_PER_LAYER = 3
TABULAR_ACTIONS = 2
TABULAR_HORIZON = 3

# Policy defaults (repulsion network: two hidden layers of 5)
DEFAULT_HIDDEN = (5, 5)
DEFAULT_LOG_STD = -0.5

# Transport defaults
DEFAULT_RFF_FEATURES = 1000
DEFAULT_RFF_SIGMA = 1.0
DEFAULT_GAMMA = 0.1
DEFAULT_ALPHA_DUAL = 0.01
DEFAULT_WARM_START_STEPS = 100
DEFAULT_WINDOW = 2
SINKHORN_TOLERANCE = 1e-9
WEIGHT_TOLERANCE = 1e-9
EMD_MAX_ITER = 1_000_000

# Histogram divergences
DEFAULT_BINS = 16
DEFAULT_SMOOTHING = 1e-6

# Policy checkpoints
CHECKPOINT_MAGIC = b"BGRLPOL1"

# CSV metrics
CSV_HEADER = ("iter", "mean_reward", "reward_std", "wd_estimate", "dual_objective", "saturations", "wall_ms", "seed")
CSV_FLOAT_FORMAT = "{:.17g}"
