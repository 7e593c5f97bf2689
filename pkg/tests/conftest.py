import numpy as np
import pytest

from wcacoreset.core import NormFamily, WeightedDataSet


def gaussian_mixture(n, k, d=2, seed=0, spread=10.0):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-spread, spread, size=(k, d))
    labels = rng.integers(0, k, n)
    return WeightedDataSet.unit(centers[labels] + rng.normal(size=(n, d)))


def random_spd(rng, d, lo=0.5, hi=3.0):
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return Q @ np.diag(rng.uniform(lo, hi, d)) @ Q.T


def random_norms(rng, k, d):
    return NormFamily(np.array([random_spd(rng, d) for _ in range(k)]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def integral_assignment_oracle(D, K):
    """Cheapest integral assignment of unit-weight points under integer bounds."""
    import itertools

    k, n = D.shape
    best = np.inf
    for labels in itertools.product(range(k), repeat=n):
        counts = np.bincount(labels, minlength=k)
        if np.all(counts >= K.lower) and np.all(counts <= K.upper):
            best = min(best, float(D[list(labels), np.arange(n)].sum()))
    return best


def random_integer_bounds(rng, n, k):
    lo = np.zeros(k)
    hi = np.full(k, np.inf)
    for i in range(k):
        r = rng.random()
        if r < 0.3:
            lo[i] = rng.integers(0, n // k + 1)
        elif r < 0.6:
            hi[i] = rng.integers(n // k, n + 1)
        elif r < 0.9:
            lo[i] = rng.integers(0, n // k + 1)
            hi[i] = rng.integers(lo[i], n + 1)
    # repair so that sum(lo) <= n <= sum(hi)
    while lo.sum() > n:
        lo[np.argmax(lo)] -= 1
    if hi.sum() < n:
        hi[np.argmin(hi)] += n - hi.sum()
    return lo, hi


def random_real_bounds(rng, total, k, slack=0.3):
    share = rng.dirichlet(np.ones(k) * 3) * total
    lo = share * (1 - slack * rng.random(k))
    hi = share * (1 + slack * rng.random(k))
    return lo, hi
