"""Seeded problem generators shared by the acceptance tests and the oracle freeze script."""

import numpy as np

from conftest import random_bases


def lasso_instance(seed):
    """Convolutional lasso with p in [64, 512], q in [4, 32], n in [2, 16], log-uniform beta."""
    r = np.random.default_rng(1000 + seed)
    p = int(r.integers(64, 513))
    q = int(r.integers(4, 33))
    n = int(r.integers(2, 17))
    beta = float(10 ** r.uniform(-2, 0.5))
    a = random_bases(r, n, 1, q)
    T = p - q + 1
    s = np.where(r.random((n, T)) < 0.02, r.laplace(size=(n, T)), 0.0)
    x = sum(np.convolve(s[j], a[j, 0]) for j in range(n))[None, :] + 0.1 * r.standard_normal((1, p))
    return x, a, beta
