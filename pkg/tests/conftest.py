import os
import tempfile

# Keep test logs out of the repository
os.environ.setdefault("POWERMIN_LOG_DIR", tempfile.mkdtemp(prefix="powermin-logs-"))

import numpy as np
import pytest

from app.config import ConfigManager, ScenarioConfig
from tests.helpers import make_csi, make_inner

@pytest.fixture(autouse=True)
def reset_config_manager():
    ConfigManager.reset()
    yield
    ConfigManager.reset()

@pytest.fixture
def rng():
    return np.random.default_rng(20240501)

@pytest.fixture
def small_csi(rng):
    """Two users, four transmit and three receive antennas, imperfect CSI."""
    return make_csi(rng, users=2, tx=4, rx=3, error_variance=0.3, random_noise=True)

@pytest.fixture
def small_inner(small_csi):
    return make_inner(small_csi, streams=(2, 2), samples=20)

@pytest.fixture
def trivial_scenario():
    """Single user, single antenna, perfect CSI: P = 2^rho - 1."""
    return ScenarioConfig(users=1, tx_antennas=1, rx_antennas=1, streams=[1], rates=[1.0],
                          samples=4, error_variance=0.0, seed=3)

@pytest.fixture
def small_scenario():
    return ScenarioConfig(users=2, tx_antennas=4, rx_antennas=3, streams=[2, 2], rates=[2.0, 1.5],
                          samples=10, error_variance=3.0, seed=11, max_outer_iters=6,
                          inner_tol=1e-10, max_inner_iters=2000, gamma=1e-6)
