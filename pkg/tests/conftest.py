import numpy as np
import pytest

from ddpgd import benchmarks as B
from ddpgd import dd_offline as O


@pytest.fixture(scope="session")
def coarse():
    """Two-domain Poisson problem at h = 0.25 (three interface DOFs per side)."""
    return B.poisson_2d(h=0.25, h_mu=0.1)


@pytest.fixture(scope="session")
def coarse_lib(coarse):
    return O.build_library(coarse, "reduced_dim", seed=0)


@pytest.fixture(scope="session")
def coarse_intervals(coarse):
    return O.default_intervals(coarse)


@pytest.fixture(scope="session")
def coarse_aip1(coarse, coarse_intervals):
    return O.build_library(coarse, "clustered", n_aip=1, intervals=coarse_intervals, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
