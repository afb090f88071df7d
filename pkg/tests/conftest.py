import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gbsirl.mdp import Mdp, RewardFunction

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("GBSIRL_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.delenv("GBSIRL_WORKERS", raising=False)


@pytest.fixture
def chain():
    """Two states; action 0 moves x0 -> x1, action 1 stays put; x1 absorbs."""
    move = np.array([[0.0, 1.0], [0.0, 1.0]])
    stay = np.array([[1.0, 0.0], [0.0, 1.0]])
    mdp = Mdp.from_arrays(np.stack([move, stay]), discount=0.9, sparse=False)
    reward = RewardFunction.from_state([0.0, 1.0], 2)
    return mdp, reward

