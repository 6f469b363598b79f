from enum import Enum


class CostKind(str, Enum):
    L1 = "l1"
    L2 = "l2"
    SQUARED_L2 = "squared_l2"
    SQUARED_ABS_SCALAR = "squared_abs_scalar"


class DampingKind(str, Enum):
    PRODUCT_MEASURE = "product_measure"
    UNIFORM_DISCRETE = "uniform_discrete"


class Side(str, Enum):
    MU = "mu"
    NU = "nu"


class EnvKind(str, Enum):
    MULTI_GOAL = "multigoal"
    DECEPTIVE_POINT = "deceptive_point"
    DECEPTIVE_QUAD_LITE = "deceptive_quad_lite"
    TABULAR_RANDOM = "tabular_random"
    CHAIN = "chain"


class BEMKind(str, Enum):
    FINAL_STATE = "final_state"
    ACTION_CONCAT = "action_concat"
    TOTAL_REWARD = "total_reward"
    REWARD_TO_GO = "reward_to_go"
    STATE_VISIT_COUNT = "state_visit_count"
    STATE_ACTION_COUNT = "state_action_count"
    FIXED_STATE_FREQ = "fixed_state_freq"
    MEAN_X_DISPLACEMENT = "mean_x_displacement"


class DivergenceKind(str, Enum):
    KL = "kl"
    JS = "js"
    HELLINGER = "hellinger"
    TV = "tv"


class Algorithm(str, Enum):
    BGES = "bges"
    BGPG_ON = "bgpg-on"
    BGPG_OFF = "bgpg-off"
    REPULSION = "repulsion"
    IMITATE = "imitate"
    ES_BASELINE = "es-baseline"


class VerifySuite(str, Enum):
    TRANSPORT = "transport"
    THEOREM1 = "theorem1"
    LEMMA_EQUALITY = "lemma-equality"
    GRADIENTS = "gradients"


class WDSolver(str, Enum):
    EXACT = "exact"
    SINKHORN = "sinkhorn"
    SGD = "sgd"
