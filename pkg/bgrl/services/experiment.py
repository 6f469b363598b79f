"""
Experiment harness: builds a learner from a RunConfig, runs the outer loop
and persists one CSV row per iteration
"""

import csv
import logging
from pathlib import Path
from typing import List, Optional

from tqdm import tqdm

from ..core import constants
from ..core.exceptions import BGRLError, InvalidParameterError, IterationError
from ..core.seeding import derive_seed
from ..models.config import HistogramDivergenceCfg, RunConfig
from ..models.enums import Algorithm, DivergenceKind
from ..models.records import IterationRecord
from .baselines import EUCLIDEAN_BC, DivergenceRegularizedES
from .behavior_guided import BehaviorGuidedES, BehaviorGuidedPG, RepulsionLearner
from .embed import ProbeDistribution, embedding_distribution, make_bem
from .envsim import TabularEnv, make_env
from .policy import GaussianPolicy, Policy, TabularPolicy, dense_arch, init_params, load_params, save_params
from .rff import rff_new
from .transport import DualPotentials, potentials_new

logger = logging.getLogger(__name__)

ES_FAMILY = (Algorithm.BGES, Algorithm.IMITATE, Algorithm.ES_BASELINE)


def format_row(record: IterationRecord, seed: int) -> List[str]:
    fmt = constants.CSV_FLOAT_FORMAT
    return [
        str(record.iter),
        fmt.format(record.mean_reward),
        fmt.format(record.reward_std),
        fmt.format(record.wd_estimate),
        fmt.format(record.dual_objective),
        str(record.saturation_count),
        fmt.format(record.wall_time * 1000.0),
        str(seed),
    ]


def checkpoint_path(output: Path) -> Path:
    """Final parameters are written next to the metrics file"""
    return output.with_suffix(".policy")


class _RepulsionAdapter:
    """Reports policy a's record; both policies share the potentials"""

    def __init__(self, learner: RepulsionLearner):
        self.learner = learner

    @property
    def policy(self) -> Policy:
        return self.learner.policy_a

    def step(self, seed: int) -> IterationRecord:
        record_a, record_b = self.learner.step(seed)
        logger.debug(f"Policy b: mean reward {record_b.mean_reward:.4f}")
        return record_a


class ExperimentRunner:
    def __init__(self, config: RunConfig):
        self.config = config
        self.env = make_env(config.env_spec, config.seed)
        self.policy = self._initial_policy(index=0)
        self.learner = self._build_learner()
        logger.info(f"Experiment ready: {config.algorithm.value} on {config.env.value}, "
                    f"{config.iterations} iterations, seed {config.seed}")

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    def _initial_policy(self, index: int) -> Policy:
        config = self.config
        if isinstance(self.env, TabularEnv):
            return TabularPolicy.uniform(self.env.num_states, self.env.num_actions)
        deterministic = config.algorithm in ES_FAMILY
        if config.checkpoint is not None and index == 0:
            params = load_params(config.checkpoint)
            if (params.arch.state_dim, params.arch.action_dim) != (self.env.state_dim, self.env.action_dim):
                raise InvalidParameterError(f"checkpoint {config.checkpoint} was saved for a different environment")
            logger.info(f"Starting from checkpoint {config.checkpoint}")
        else:
            arch = dense_arch(self.env.state_dim, self.env.action_dim, config.hidden)
            params = init_params(arch, derive_seed(config.seed, "policy", index), config.log_std)
        return GaussianPolicy(params, deterministic=deterministic)

    def _potentials(self, dim: int) -> DualPotentials:
        config = self.config
        feature_map = rff_new(dim, config.rff_features, config.rff_sigma, derive_seed(config.seed, "rff"))
        return potentials_new(feature_map, gamma=config.gamma, alpha=config.alpha_dual)

    def _regularizer(self):
        divergence = self.config.divergence
        if divergence == "none":
            return None
        if divergence == EUCLIDEAN_BC:
            return EUCLIDEAN_BC
        return HistogramDivergenceCfg(kind=DivergenceKind(divergence), bins=self.config.bins,
                                      epsilon=self.config.smoothing)

    def _build_learner(self):
        config, env, policy = self.config, self.env, self.policy
        objective = config.objective
        algorithm = config.algorithm

        if algorithm == Algorithm.BGPG_OFF:
            probe = ProbeDistribution(config.probe_capacity, derive_seed(config.seed, "probe"))
            potentials = self._potentials(env.state_dim + env.action_dim)
            return BehaviorGuidedPG(policy, env, None, objective, potentials, config.trajectories,
                                    config.inner_steps, config.eta, config.cost, probe=probe,
                                    probe_samples=config.probe_samples)

        bem = make_bem(config.bem, env, config.fixed_state)
        if algorithm == Algorithm.ES_BASELINE:
            return DivergenceRegularizedES(policy, env, bem, self._regularizer(), config.n, config.sigma,
                                           config.eta, config.beta, config.window)

        potentials = self._potentials(bem.output_dim)
        if algorithm == Algorithm.BGES:
            return BehaviorGuidedES(policy, env, bem, objective, potentials, config.n, config.sigma, config.eta,
                                    config.cost)
        if algorithm == Algorithm.IMITATE:
            expert = embedding_distribution(bem, [env.scripted_expert(derive_seed(config.seed, "expert"))])
            return BehaviorGuidedES(policy, env, bem, objective, potentials, config.n, config.sigma, config.eta,
                                    config.cost, base=expert)
        if algorithm == Algorithm.BGPG_ON:
            return BehaviorGuidedPG(policy, env, bem, objective, potentials, config.trajectories,
                                    config.inner_steps, config.eta, config.cost)
        learner = RepulsionLearner(policy, self._initial_policy(index=1), env, bem, objective, potentials,
                                   config.trajectories, config.eta, config.cost)
        return _RepulsionAdapter(learner)

    # ------------------------------------------------------------------
    # Outer loop
    # ------------------------------------------------------------------

    def step(self, iteration: int) -> IterationRecord:
        seed = derive_seed(self.config.seed, "iteration", iteration)
        try:
            return self.learner.step(seed)
        except BGRLError as exc:
            raise IterationError(exc.detail, iteration) from exc
        except (ValueError, ArithmeticError) as exc:
            raise IterationError(str(exc), iteration) from exc
        except Exception as exc:
            logger.exception(f"Unexpected failure in iteration {iteration}")
            raise IterationError(f"{type(exc).__name__}: {exc}", iteration) from exc

    def run(self, output: Optional[Path] = None, progress: bool = False) -> List[IterationRecord]:
        config = self.config
        output = Path(output or config.output)
        output.parent.mkdir(parents=True, exist_ok=True)
        records = []
        with output.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(constants.CSV_HEADER)
            iterations = tqdm(range(config.iterations), desc=config.algorithm.value, unit="it", disable=not progress)
            for t in iterations:
                record = self.step(t)
                writer.writerow(format_row(record, derive_seed(config.seed, "iteration", t)))
                handle.flush()
                records.append(record)
                iterations.set_postfix(reward=f"{record.mean_reward:.3f}", wd=f"{record.wd_estimate:.3f}")

        final = self.learner.policy
        if isinstance(final, GaussianPolicy):
            save_params(final.params, checkpoint_path(output))
        logger.info(f"Run finished: {len(records)} rows written to {output}")
        return records


def run_experiment(config: RunConfig, progress: bool = False) -> List[IterationRecord]:
    return ExperimentRunner(config).run(progress=progress)
