import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from impulseid import ImpulseTrain, SystemParams, simulate_output

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def sparse_data(b1, b2, idx, d, dt=0.25, n=60, x2_init=0.0):
    """Noise-free output with impulses on the sample indices ``idx``."""
    t = dt * np.arange(n)
    train = ImpulseTrain(t[list(idx)], np.asarray(d, dtype=float))
    return simulate_output(SystemParams(b1, b2), train, x2_init, t), train


def random_sparse(rng, n=48, dt=0.25, n_imp=3, gap=8):
    """Random rates and well-separated on-grid impulses; returns (b1, b2, y, train)."""
    b1 = rng.uniform(0.4, 1.4)
    b2 = b1 + rng.uniform(0.3, 1.3)
    idx = 2 + gap * np.arange(n_imp) + rng.integers(0, 3, n_imp)
    d = rng.uniform(0.1, 1.0, n_imp)
    y, train = sparse_data(b1, b2, idx, d, dt, n)
    return b1, b2, y, train


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
