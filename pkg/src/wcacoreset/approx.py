"""Unconstrained least-squares front end and small-instance oracles.

``ab_approximate`` is weighted D^2 seeding followed by Lloyd refinement with
``beta * k`` centers. ``opt_bruteforce`` enumerates integral assignments and is
only meant as a test oracle. ``alternate_sites`` is the constrained heuristic
(sites <-> LP assignment) used by the end-to-end pipeline and the harnesses.
"""
from __future__ import annotations

import logging

import numpy as np

from .assign import solve_transport, _truncate
from .core import (
    Clustering,
    NormFamily,
    SiteSet,
    WCAError,
    WeightBounds,
    WeightedDataSet,
    centroids,
    distance_matrix,
    opt_site_cost,
)

log = logging.getLogger(__name__)

MAX_ENUMERATION = 10**7


class InstanceTooLargeError(WCAError):
    pass


def _sq_dists(P: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (P * P).sum(1)[:, None] - 2.0 * P @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _seed_centers(P, w, m, rng):
    n = P.shape[0]
    idx = [int(rng.choice(n, p=w / w.sum()))]
    closest = _sq_dists(P, P[idx])[:, 0]
    for _ in range(1, m):
        pot = w * closest
        total = pot.sum()
        if total <= 0:
            # all remaining mass sits on chosen centers
            nxt = int(rng.choice(n, p=w / w.sum()))
        else:
            nxt = int(rng.choice(n, p=pot / total))
        idx.append(nxt)
        closest = np.minimum(closest, _sq_dists(P, P[nxt:nxt + 1])[:, 0])
    return P[idx].copy()


def _lloyd(P, w, centers, max_iter=100, rel_tol=1e-6):
    m = centers.shape[0]
    prev = np.inf
    history = []
    for _ in range(max_iter):
        d = _sq_dists(P, centers)
        labels = np.argmin(d, axis=1)
        contrib = w * d[np.arange(len(P)), labels]
        cur = float(contrib.sum())
        history.append(cur)
        mass = np.bincount(labels, weights=w, minlength=m)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, w[:, None] * P)
        empty = mass <= 0
        new = centers.copy()
        new[~empty] = sums[~empty] / mass[~empty, None]
        for e in np.flatnonzero(empty):
            # reseed at the point of largest current cost contribution
            far = int(np.argmax(contrib))
            new[e] = P[far]
            contrib[far] = 0.0
        centers = new
        if prev < np.inf and prev - cur <= rel_tol * prev:
            break
        prev = cur
    d = _sq_dists(P, centers)
    labels = np.argmin(d, axis=1)
    return labels, history


def _labels_cost(P, w, labels, m):
    mass = np.bincount(labels, weights=w, minlength=m)
    sums = np.zeros((m, P.shape[1]))
    np.add.at(sums, labels, w[:, None] * P)
    live = mass > 0
    cent = np.zeros_like(sums)
    cent[live] = sums[live] / mass[live, None]
    return float(w @ ((P - cent[labels]) ** 2).sum(1))


def ab_approximate(X: WeightedDataSet, k: int, beta: int = 1, repeats: int = 5,
                   seed: int = 0, max_iter: int = 100, return_history: bool = False):
    """Integral clustering with at most ``beta * k`` clusters and its cost.

    Returns ``(clustering, alg)`` where ``alg`` is the Euclidean cost of the
    clustering with each cluster served from its centroid.
    """
    m = beta * k
    if m >= X.n:
        C = Clustering(np.eye(X.n))
        return (C, 0.0, [[0.0]]) if return_history else (C, 0.0)
    P, w = X.points, X.weights
    best = None
    for run in range(repeats):
        rng = np.random.default_rng([seed, run])
        centers = _seed_centers(P, w, m, rng)
        labels, history = _lloyd(P, w, centers, max_iter=max_iter)
        alg = _labels_cost(P, w, labels, m)
        if best is None or alg < best[0]:
            best = (alg, labels, history)
    alg, labels, history = best
    C = Clustering.from_labels(labels, m)
    return (C, alg, history) if return_history else (C, alg)


def _enumerate_labels(n, k, chunk):
    total = k ** n
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        labels = np.empty((codes.size, n), dtype=np.int64)
        for j in range(n):
            labels[:, j] = codes % k
            codes = codes // k
        yield labels


def opt_bruteforce(X: WeightedDataSet, k: int, chunk: int = 1 << 16) -> float:
    """Exact unconstrained least-squares optimum by exhaustive enumeration."""
    if k >= X.n:
        return 0.0
    if k ** X.n > MAX_ENUMERATION:
        raise InstanceTooLargeError(f"k^n = {k}^{X.n} exceeds {MAX_ENUMERATION}")
    P, w = X.points, X.weights
    q = w * (P * P).sum(1)
    wp = w[:, None] * P
    best = np.inf
    for labels in _enumerate_labels(X.n, k, chunk):
        total = np.zeros(labels.shape[0])
        for i in range(k):
            mask = labels == i
            mass = mask @ w
            lin = mask @ wp
            quad = mask @ q
            with np.errstate(divide="ignore", invalid="ignore"):
                v = quad - np.where(mass > 0, (lin * lin).sum(1) / mass, 0.0)
            total += v
        best = min(best, float(total.min()))
    return max(best, 0.0)


def alternate_sites(X: WeightedDataSet, k: int, A: NormFamily, K: WeightBounds,
                    starts: int = 5, seed: int = 0, max_iter: int = 50,
                    init_sites=None, rel_tol: float = 1e-9):
    """Best-found constrained clustering by alternating sites and LP assignment.

    Returns ``(clustering, sites, cost)`` where ``cost`` is the centroid cost
    of the clustering. ``init_sites`` adds one extra start from given sites.
    """
    K.check_feasible(X.total_weight)
    inits = []
    if init_sites is not None:
        inits.append(np.asarray(init_sites, dtype=np.float64))
    for s in range(starts):
        rng = np.random.default_rng([seed, s])
        inits.append(_seed_centers(X.points, X.weights, k, rng))
    best = None
    for sites in inits:
        prev = np.inf
        C = None
        for _ in range(max_iter):
            D = distance_matrix(X, SiteSet(sites), A)
            xi, _, _, _ = solve_transport(D, X.weights, K)
            C = Clustering(_truncate(xi))
            cur = opt_site_cost(X, C, A)
            cent, mass = centroids(X, C)
            live = mass > 0
            sites = np.where(live[:, None], cent, sites)
            if prev - cur <= rel_tol * max(prev, 1e-300):
                break
            prev = cur
        cur = opt_site_cost(X, C, A)
        if best is None or cur < best[2]:
            best = (C, SiteSet(sites), cur)
    return best
