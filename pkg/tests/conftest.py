import numpy as np
import pytest

from mcmatch import reactor
from mcmatch.config import ExperimentConfig

# Gains from the Monte Carlo tuning with the quadratic-plus-move-penalty
# objective, in L/s per K (kp), L/s per K s (ki) and 1/s (kaw).
PHI2_GAINS = {"kp": -4.0e-4, "ki": -4.9091e-5, "kaw": 0.11636}


@pytest.fixture(scope="session")
def cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def params(cfg):
    return cfg.params


@pytest.fixture(scope="session")
def plant(cfg):
    return cfg.plant()


@pytest.fixture(scope="session")
def gains(cfg):
    return cfg.gains()


@pytest.fixture(scope="session")
def phi2_gains(cfg):
    return cfg.gains(PHI2_GAINS)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def operating_flow():
    return reactor.ml_min_to_l_s(630.0)
