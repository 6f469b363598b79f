import math
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator


class IterationRecord(BaseModel):
    iter: int = Field(..., ge=0)
    mean_reward: float
    reward_std: float
    wd_estimate: float = 0.0
    dual_objective: float = 0.0
    saturation_count: int = Field(0, ge=0)
    wall_time: float = Field(0.0, ge=0.0, description="Seconds spent in the iteration")
    clip_count: int = Field(0, ge=0, description="Importance ratios clipped during the iteration")

    @field_validator("mean_reward", "reward_std", "wd_estimate", "dual_objective")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("record fields must be finite")
        return value


class PolicyImprovementReport(BaseModel):
    value_pi: float
    value_pi_tilde: float
    surrogate: float = Field(..., description="L(pi~): first-order approximation of V(pi~) around pi")
    epsilon: float = Field(..., description="max |A^pi(s, a)|")
    wd0: float
    slack: float = Field(..., description="V(pi~) - (L(pi~) - wd0 * epsilon)")
    holds: bool
    visitation_l1: float = Field(..., description="sum_s |rho_pi(s) - rho_pi~(s)|")
    visitation_bound_holds: bool


class VerificationReport(BaseModel):
    suite: str
    passed: int = 0
    failed: int = 0
    failures: List[str] = Field(default_factory=list)
    details: Dict[str, Any] = Field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def check(self, condition: bool, label: str) -> bool:
        if condition:
            self.passed += 1
        else:
            self.failed += 1
            self.failures.append(label)
        return condition


class SinkhornResult(BaseModel):
    value: float
    converged: bool
    iterations: int
    marginal_error: float
    transport_cost: Optional[float] = None
