from pathlib import Path

import numpy as np
import pytest

from bgrl.core.config import settings
from bgrl.services.envsim import random_tabular_mdp
from bgrl.services.rff import rff_new
from bgrl.services.transport import potentials_new


@pytest.fixture
def feature_map_2d():
    return rff_new(2, 200, 1.0, seed=7)


@pytest.fixture
def zero_potentials(feature_map_2d):
    return potentials_new(feature_map_2d, gamma=0.1, alpha=0.05)


@pytest.fixture
def small_mdp():
    return random_tabular_mdp(states_per_layer=2, num_actions=2, horizon=2, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def threads(monkeypatch):
    """Run rollouts on a pool of the given size"""

    def _set(count: int):
        monkeypatch.setattr(settings, "BGRL_THREADS", count)

    return _set


@pytest.fixture
def write_config(tmp_path):
    """Write a run config into tmp_path; ``output`` defaults to a CSV next to it"""

    def _write(text: str, name: str = "run.conf") -> Path:
        body = text.strip() + "\n"
        if "output=" not in body:
            body += f"output={tmp_path / 'metrics.csv'}\n"
        path = tmp_path / name
        path.write_text(body, encoding="utf-8")
        return path

    return _write
