import io
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from dotenv.parser import parse_stream
from pydantic import BaseModel, Field, ValidationError, ValidationInfo, field_validator, model_validator

from ..core import constants
from ..core.exceptions import ConfigError
from .enums import Algorithm, BEMKind, CostKind, DivergenceKind, EnvKind


class EnvSpec(BaseModel):
    kind: EnvKind
    horizon: Optional[int] = Field(None, ge=1, description="Episode horizon H (kind default when omitted)")
    states_per_layer: int = Field(constants.TABULAR_STATES_PER_LAYER, ge=1)
    num_actions: int = Field(constants.TABULAR_ACTIONS, ge=1)
    chain_length: int = Field(constants.CHAIN_LENGTH, ge=2)

    @property
    def resolved_horizon(self) -> int:
        if self.horizon is not None:
            return self.horizon
        return {
            EnvKind.MULTI_GOAL: constants.MULTIGOAL_HORIZON,
            EnvKind.DECEPTIVE_POINT: constants.DECEPTIVE_HORIZON,
            EnvKind.DECEPTIVE_QUAD_LITE: constants.QUAD_LITE_HORIZON,
            EnvKind.TABULAR_RANDOM: constants.TABULAR_HORIZON,
            EnvKind.CHAIN: constants.CHAIN_HORIZON,
        }[self.kind]

    @property
    def state_dim(self) -> int:
        if self.kind == EnvKind.DECEPTIVE_QUAD_LITE:
            return 4
        if self.kind in (EnvKind.MULTI_GOAL, EnvKind.DECEPTIVE_POINT):
            return 2
        return 1

    @property
    def action_dim(self) -> int:
        if self.kind in (EnvKind.MULTI_GOAL, EnvKind.DECEPTIVE_POINT, EnvKind.DECEPTIVE_QUAD_LITE):
            return 2
        return 1

    @property
    def is_tabular(self) -> bool:
        return self.kind == EnvKind.TABULAR_RANDOM


class RegularizedObjectiveCfg(BaseModel):
    """Weights of the behavior-regularized objective F(θ) = E[R] + β·WD_γ(P_b, P_θ)"""
    beta: float = 0.0
    gamma: float = Field(constants.DEFAULT_GAMMA, gt=0.0)
    alpha_dual: float = Field(constants.DEFAULT_ALPHA_DUAL, gt=0.0)
    dual_steps_per_iter: int = Field(constants.DEFAULT_WARM_START_STEPS, ge=1)
    warm_start_steps: int = Field(constants.DEFAULT_WARM_START_STEPS, ge=0)
    base_policy_window: int = Field(constants.DEFAULT_WINDOW, ge=1)
    differentiate_cost: bool = Field(False, description="Also differentiate C(x, y) inside the damping term")
    reward_baseline: bool = Field(True, description="Subtract the batch mean from REINFORCE returns")


class HistogramDivergenceCfg(BaseModel):
    kind: DivergenceKind
    bins: int = Field(constants.DEFAULT_BINS, ge=2)
    ranges: Optional[List[Tuple[float, float]]] = Field(None, description="(low, high) per embedding dimension")
    epsilon: float = Field(constants.DEFAULT_SMOOTHING, gt=0.0)

    @field_validator("ranges")
    @classmethod
    def _ordered(cls, value: Optional[List[Tuple[float, float]]]) -> Optional[List[Tuple[float, float]]]:
        if value is not None:
            for low, high in value:
                if not high > low:
                    raise ValueError("histogram range must satisfy high > low")
        return value


NOVELTY_CHOICES = ("none", "euclidean") + tuple(kind.value for kind in DivergenceKind)
WD_ALGORITHMS = (Algorithm.BGES, Algorithm.BGPG_ON, Algorithm.BGPG_OFF, Algorithm.REPULSION, Algorithm.IMITATE)


class RunConfig(BaseModel):
    """
    One experiment, read from a flat ``key=value`` file

    Field order is the serialisation order of ``to_text``.
    """
    algorithm: Algorithm
    env: EnvKind
    bem: BEMKind = BEMKind.FINAL_STATE
    fixed_state: Optional[int] = Field(None, ge=0, description="State id for the fixed_state_freq embedding")
    cost: CostKind = CostKind.L2

    gamma: float = constants.DEFAULT_GAMMA
    beta: float = 0.0
    eta: float = Field(0.1, gt=0.0)
    sigma: float = Field(0.01, gt=0.0)
    n: int = Field(8, ge=2, description="ES perturbations per iteration")
    trajectories: int = Field(8, ge=2, description="Trajectories per policy-gradient iteration (M)")
    inner_steps: int = Field(1, ge=1, description="Alternating rounds per BGPG iteration (L)")
    iterations: int = Field(1, ge=1)

    rff_features: int = Field(constants.DEFAULT_RFF_FEATURES, ge=1)
    rff_sigma: float = Field(constants.DEFAULT_RFF_SIGMA, gt=0.0)
    alpha_dual: float = Field(constants.DEFAULT_ALPHA_DUAL, gt=0.0)
    warm_start: int = Field(constants.DEFAULT_WARM_START_STEPS, ge=0)
    dual_steps: int = Field(constants.DEFAULT_WARM_START_STEPS, ge=1)
    window: int = Field(constants.DEFAULT_WINDOW, ge=1)
    differentiate_cost: bool = False

    hidden: Tuple[int, ...] = constants.DEFAULT_HIDDEN
    log_std: float = constants.DEFAULT_LOG_STD

    horizon: Optional[int] = Field(None, ge=1)
    states_per_layer: int = Field(constants.TABULAR_STATES_PER_LAYER, ge=1)
    num_actions: int = Field(constants.TABULAR_ACTIONS, ge=1)
    chain_length: int = Field(constants.CHAIN_LENGTH, ge=2)

    probe_capacity: int = Field(1000, ge=1)
    probe_samples: int = Field(32, ge=1)

    divergence: str = "none"
    bins: int = Field(constants.DEFAULT_BINS, ge=2)
    smoothing: float = Field(constants.DEFAULT_SMOOTHING, gt=0.0)

    seed: int = 0
    output: str = "runs/metrics.csv"
    checkpoint: Optional[str] = None

    @field_validator("gamma")
    @classmethod
    def _smoothed_gamma(cls, value: float, info: ValidationInfo) -> float:
        if info.data.get("algorithm") in WD_ALGORITHMS and not value > 0.0:
            raise ValueError("smoothed solver requires gamma > 0")
        if value < 0.0:
            raise ValueError("gamma must be nonnegative")
        return value

    @field_validator("hidden", mode="before")
    @classmethod
    def _split_hidden(cls, value):
        if isinstance(value, str):
            value = value.strip()
            return tuple(int(part) for part in value.split(",") if part.strip()) if value else ()
        return value

    @field_validator("hidden")
    @classmethod
    def _positive_hidden(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(width < 1 for width in value):
            raise ValueError("hidden layer widths must be positive")
        return value

    @field_validator("divergence")
    @classmethod
    def _known_divergence(cls, value: str) -> str:
        value = value.strip().lower()
        if value not in NOVELTY_CHOICES:
            raise ValueError(f"divergence must be one of {', '.join(NOVELTY_CHOICES)}")
        return value

    @model_validator(mode="after")
    def _embedding_fits(self) -> "RunConfig":
        if self.bem == BEMKind.FIXED_STATE_FREQ and self.fixed_state is None:
            raise ValueError("fixed_state_freq embedding requires fixed_state")
        if self.algorithm == Algorithm.REPULSION and self.env != EnvKind.MULTI_GOAL:
            raise ValueError("repulsion runs on the multigoal environment")
        if self.algorithm == Algorithm.IMITATE:
            if self.env != EnvKind.CHAIN:
                raise ValueError("imitation runs on the chain environment")
            if not self.beta < 0.0:
                raise ValueError("imitation requires beta < 0")
        if self.algorithm == Algorithm.BGPG_OFF and self.env == EnvKind.TABULAR_RANDOM:
            raise ValueError("off-policy embeddings need a continuous environment")
        if self.checkpoint is not None and self.env == EnvKind.TABULAR_RANDOM:
            raise ValueError("checkpoints hold Gaussian policy parameters")
        return self

    @property
    def env_spec(self) -> EnvSpec:
        return EnvSpec(
            kind=self.env,
            horizon=self.horizon,
            states_per_layer=self.states_per_layer,
            num_actions=self.num_actions,
            chain_length=self.chain_length,
        )

    @property
    def objective(self) -> RegularizedObjectiveCfg:
        return RegularizedObjectiveCfg(
            beta=self.beta,
            gamma=self.gamma if self.gamma > 0 else constants.DEFAULT_GAMMA,
            alpha_dual=self.alpha_dual,
            dual_steps_per_iter=self.dual_steps,
            warm_start_steps=self.warm_start,
            base_policy_window=self.window,
            differentiate_cost=self.differentiate_cost,
        )

    def to_text(self) -> str:
        lines = []
        for name in type(self).model_fields:
            value = getattr(self, name)
            if value is None:
                continue
            lines.append(f"{name}={_render(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values: Dict[str, str] = {}
        lines: Dict[str, int] = {}
        for binding in parse_stream(io.StringIO(text)):
            line = binding.original.line
            if binding.error:
                raise ConfigError(f"cannot parse {binding.original.string.strip()!r}", line)
            if binding.key is None:
                continue
            if binding.value is None:
                raise ConfigError(f"expected key=value, got {binding.key!r}", line)
            if binding.key not in cls.model_fields:
                raise ConfigError(f"unknown key {binding.key!r}", line)
            if binding.key in values:
                raise ConfigError(f"duplicate key {binding.key!r}", line)
            values[binding.key] = binding.value
            lines[binding.key] = line
        try:
            return cls(**values)
        except ValidationError as exc:
            error = exc.errors()[0]
            key = str(error["loc"][0]) if error["loc"] else None
            message = str(error["msg"]).removeprefix("Value error, ")
            if key is not None:
                message = f"{key}: {message}"
            raise ConfigError(message, lines.get(key, _last_line(lines))) from exc

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls.parse(text)


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "value"):
        return str(value.value)
    if isinstance(value, tuple):
        return ",".join(str(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _last_line(lines: Dict[str, int]) -> Optional[int]:
    return max(lines.values()) if lines else None
