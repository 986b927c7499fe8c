import numpy as np
import pytest

from axivortex.config import ORACLE_SIGMA, SigmaSpec, random_sigma
from axivortex.core import AmbientProfile, Forcing, ModelConfig
from axivortex.dual import solve_dual
from axivortex.dynamics import simulate

DYN_SIGMA = SigmaSpec(n_atoms=8, r_min=0.2, r_max=0.5, angle_min=0.15, angle_max=1.42)


@pytest.fixture(scope="session")
def cfg():
    return ModelConfig()


@pytest.fixture(scope="session")
def ambient():
    return AmbientProfile.power_law()


@pytest.fixture(scope="session")
def sigma8():
    """8 seeded atoms in the quarter disc of radius 2 with Z >= 0.5."""
    return random_sigma(ORACLE_SIGMA, 1)


@pytest.fixture(scope="session")
def solved(sigma8, cfg, ambient):
    return solve_dual(sigma8, cfg, ambient)


@pytest.fixture(scope="session")
def dyn_cfg():
    return ModelConfig(M=0.25, T=0.5, N=16, l0=0.5, l=4.0)


@pytest.fixture(scope="session")
def dyn_sigma():
    return random_sigma(DYN_SIGMA, 3)


@pytest.fixture(scope="session")
def trajectory(dyn_sigma, dyn_cfg, ambient):
    return simulate(dyn_sigma, dyn_cfg, ambient, Forcing.default(dyn_cfg.M, dyn_cfg.g, dyn_cfg.r0))


@pytest.fixture(scope="session")
def zero_trajectory(dyn_sigma, dyn_cfg, ambient):
    return simulate(dyn_sigma, dyn_cfg, ambient, Forcing.zero())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
