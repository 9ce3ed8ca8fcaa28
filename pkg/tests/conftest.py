import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_bases(rng, n, F, q, c=1.0):
    a = rng.standard_normal((n, F, q))
    return a * np.sqrt(c / np.sum(a * a, axis=(1, 2), keepdims=True))


def sparse_instance(rng, n, F, q, p, density=0.05, noise=0.05):
    """Bases, a sparse ground-truth map and the noisy signal it generates."""
    a = random_bases(rng, n, F, q)
    T = p - q + 1
    s = np.where(rng.random((n, T)) < density, rng.laplace(size=(n, T)), 0.0)
    x = np.zeros((F, p))
    for j in range(n):
        for t in np.nonzero(s[j])[0]:
            x[:, t:t + q] += s[j, t] * a[j]
    return a, s, x + noise * rng.standard_normal((F, p))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
