import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from safeglasso import BasisSpec, FunctionalDataset, make_basis  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy_bases():
    return make_basis(BasisSpec(0.0, 1.0, 15)), make_basis(BasisSpec(-1.0, 1.0, 7))


@pytest.fixture(scope="session")
def small_bases():
    return make_basis(BasisSpec(0.0, 1.0, 6)), make_basis(BasisSpec(-1.0, 1.0, 4))


def random_dataset(rng, N=40, K=3, R=25, lo=0.0, hi=1.0):
    X = rng.normal(size=(K, N, R))
    z = rng.uniform(-1.0, 1.0, size=N)
    y = rng.normal(size=N)
    return FunctionalDataset(y, z, X, np.linspace(lo, hi, R))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
