"""Exact weight-constrained assignment, diagrams, and merging functions.

The assignment LP is posed on flows ``y_ij = xi_ij * w_j``::

    min  sum_ij c_ij y_ij
    s.t. sum_i y_ij = w_j                  (price u_j)
         sum_j y_ij >= lower_i             (price a_i >= 0)
         sum_j y_ij <= upper_i             (price b_i >= 0)
         y >= 0

so the reduced cost of edge ``(i, j)`` is ``c_ij - u_j - a_i + b_i`` and the
cluster sizes of the induced diagram are ``sigma_i = b_i - a_i``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import (
    Clustering,
    DimensionError,
    NormFamily,
    SiteSet,
    WCAError,
    WeightBounds,
    WeightedDataSet,
    _frozen,
    distance_matrix,
    sq_norm,
)

TRUNCATE_TOL = 1e-9
MEMBERSHIP_TOL = 1e-9


class DegeneracyError(WCAError):
    """Raised when no strictly compatible diagram was found after retries."""

    def __init__(self, message, cell_pair=None):
        super().__init__(message)
        self.cell_pair = cell_pair


@dataclass(frozen=True)
class DualCertificate:
    point_prices: np.ndarray
    lower_prices: np.ndarray
    upper_prices: np.ndarray
    primal_cost: float
    dual_objective: float
    slackness_residual: float
    dual_infeasibility: float
    seed: int | None = None
    attempts: int = 1

    @property
    def sizes(self) -> np.ndarray:
        return self.upper_prices - self.lower_prices

    @property
    def gap(self) -> float:
        return abs(self.primal_cost - self.dual_objective) / (1.0 + abs(self.primal_cost))

    def to_dict(self) -> dict:
        return {
            "point_prices": [float(v) for v in self.point_prices],
            "lower_prices": [float(v) for v in self.lower_prices],
            "upper_prices": [float(v) for v in self.upper_prices],
            "primal_cost": self.primal_cost,
            "dual_objective": self.dual_objective,
            "relative_gap": self.gap,
            "slackness_residual": self.slackness_residual,
            "dual_infeasibility": self.dual_infeasibility,
            "seed": self.seed,
            "attempts": self.attempts,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _support_is_forest(y: np.ndarray, tol: float = TRUNCATE_TOL) -> bool:
    k, n = y.shape
    parent = np.arange(n + k)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    ii, jj = np.nonzero(y > tol)
    for i, j in zip(ii, jj):
        ra, rb = find(j), find(n + i)
        if ra == rb:
            return False
        parent[ra] = rb
    return True


def support_is_forest(C: Clustering) -> bool:
    """True if the bipartite points-by-clusters support graph is acyclic."""
    return _support_is_forest(C.xi, TRUNCATE_TOL)


def _truncate(xi: np.ndarray) -> np.ndarray:
    xi = np.where(xi > TRUNCATE_TOL, xi, 0.0)
    sums = xi.sum(axis=0)
    return xi / sums


def _nearest_site(D: np.ndarray, w: np.ndarray):
    k, n = D.shape
    labels = np.argmin(D, axis=0)  # first minimum, i.e. lowest index
    xi = np.zeros((k, n))
    xi[labels, np.arange(n)] = 1.0
    u = D[labels, np.arange(n)]
    return xi, u, np.zeros(k), np.zeros(k)


def _lp_matrices(k: int, n: int, lower: np.ndarray, upper: np.ndarray):
    cols = np.arange(k * n)
    A_eq = sparse.csr_matrix((np.ones(k * n), (np.tile(np.arange(n), k), cols)), shape=(n, k * n))
    rows_of = sparse.csr_matrix((np.ones(k * n), (np.repeat(np.arange(k), n), cols)), shape=(k, k * n))
    up_idx = np.flatnonzero(np.isfinite(upper))
    lo_idx = np.flatnonzero(lower > 0)
    A_ub = sparse.vstack([rows_of[up_idx], -rows_of[lo_idx]]).tocsr()
    b_ub = np.concatenate([upper[up_idx], -lower[lo_idx]])
    return A_eq, A_ub, b_ub, up_idx, lo_idx


def solve_transport(D: np.ndarray, weights: np.ndarray, K: WeightBounds,
                    method: str = "highs-ipm"):
    """Solve the assignment LP for a ``k x n`` cost matrix.

    Returns ``(xi, u, a, b)`` with ``xi`` a vertex of the feasible polytope.
    """
    k, n = D.shape
    w = np.asarray(weights, dtype=np.float64)
    total = float(w.sum())
    K.check_feasible(total)
    if K.is_unconstrained(total):
        return _nearest_site(D, w)
    A_eq, A_ub, b_ub, up_idx, lo_idx = _lp_matrices(k, n, K.lower, K.upper)
    opts = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
    for m in (method, "highs-ds"):
        res = linprog(D.ravel(), A_ub=A_ub if A_ub.shape[0] else None,
                      b_ub=b_ub if A_ub.shape[0] else None,
                      A_eq=A_eq, b_eq=w, bounds=(0, None), method=m, options=opts)
        if res.status != 0:
            raise WCAError(f"assignment LP failed: {res.message}")
        y = np.clip(res.x.reshape(k, n), 0.0, None)
        if _support_is_forest(y / w):
            break
    else:
        raise WCAError("LP solver did not return a vertex solution")
    u = np.asarray(res.eqlin.marginals, dtype=np.float64)
    a = np.zeros(k)
    b = np.zeros(k)
    if A_ub.shape[0]:
        marg = np.asarray(res.ineqlin.marginals, dtype=np.float64)
        b[up_idx] = -marg[: up_idx.size]
        a[lo_idx] = -marg[up_idx.size:]
    return y / w, u, np.clip(a, 0.0, None), np.clip(b, 0.0, None)


def _certificate(D, w, K, xi, u, a, b, seed=None, attempts=1) -> DualCertificate:
    y = xi * w
    primal = float(np.sum(D * y))
    loads = y.sum(axis=1)
    fin = np.isfinite(K.upper)
    dual = float(w @ u + K.lower @ a - np.sum(K.upper[fin] * b[fin]))
    red = D - u[None, :] - a[:, None] + b[:, None]
    slack = float(np.sum(y * np.abs(red)) + a @ np.abs(loads - K.lower)
                  + np.sum(b[fin] * np.abs(K.upper[fin] - loads[fin])))
    infeas = float(max(0.0, -red.min()))
    return DualCertificate(_frozen(u), _frozen(a), _frozen(b), primal, dual, slack,
                           infeas, seed, attempts)


def solve_assignment(X: WeightedDataSet, S: SiteSet, A: NormFamily, K: WeightBounds):
    """Optimal constrained assignment of ``X`` to the sites ``S``.

    Returns ``(clustering, certificate)``. With unconstrained bounds every point
    goes to a nearest site (lowest index on ties).
    """
    if K.k != S.k:
        raise DimensionError(f"{K.k} weight bounds for {S.k} sites")
    D = distance_matrix(X, S, A)
    xi, u, a, b = solve_transport(D, X.weights, K)
    xi = _truncate(xi)
    return Clustering(xi), _certificate(D, X.weights, K, xi, u, a, b)


def assignment_cost(X: WeightedDataSet, S: SiteSet, A: NormFamily, K: WeightBounds) -> float:
    C, _ = solve_assignment(X, S, A, K)
    D = distance_matrix(X, S, A)
    return float(np.sum(C.xi * D * X.weights))


@dataclass(frozen=True)
class AnisotropicDiagram:
    sites: np.ndarray
    sizes: np.ndarray
    norms: NormFamily

    def __post_init__(self):
        T = _frozen(self.sites)
        s = _frozen(np.asarray(self.sizes, dtype=np.float64).reshape(-1))
        if T.ndim != 2 or T.shape[0] != s.shape[0] or T.shape[0] != self.norms.k:
            raise DimensionError("sites, sizes and norms must agree in k")
        if T.shape[1] != self.norms.d:
            raise DimensionError("sites and norms must agree in dimension")
        diff = T[:, None, :] - T[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1)) + np.eye(T.shape[0])
        if np.any(dist <= 1e-12):
            i, l = np.argwhere(dist <= 1e-12)[0]
            raise WCAError(f"diagram sites {i} and {l} coincide")
        object.__setattr__(self, "sites", T)
        object.__setattr__(self, "sizes", s)

    @property
    def k(self) -> int:
        return self.sites.shape[0]

    def g(self, points) -> np.ndarray:
        """``k x m`` matrix of ``||x - t_i||_{A_i}^2 + sigma_i``."""
        P = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty((self.k, P.shape[0]))
        for i in range(self.k):
            out[i] = sq_norm(self.norms.matrices[i], P - self.sites[i]) + self.sizes[i]
        return out

    def membership(self, points, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        """Boolean ``k x m`` matrix: point lies in cell ``i`` up to ``tol``.

        The tolerance is relative to ``1 + |h(x)|``; every point lies in at
        least one cell.
        """
        G = self.g(points)
        h = G.min(axis=0)
        return G - h <= tol * (1.0 + np.abs(h))

    def to_dict(self) -> dict:
        return {"sites": self.sites.tolist(), "sizes": self.sizes.tolist(),
                "A": self.norms.matrices.tolist()}


class Compatibility(enum.IntEnum):
    NONE = 0
    COMPATIBLE = 1
    STRONG = 2
    STRICT = 3


def check_compatibility(P: AnisotropicDiagram, C: Clustering, X: WeightedDataSet,
                        tol: float = MEMBERSHIP_TOL) -> Compatibility:
    if C.k != P.k or C.n != X.n or X.d != P.sites.shape[1]:
        raise DimensionError("diagram, clustering and data set disagree in shape")
    inside = P.membership(X.points, tol)
    supp = C.xi > 0
    if np.any(supp & ~inside):
        return Compatibility.NONE
    if np.any(inside & ~supp):
        return Compatibility.COMPATIBLE
    shared = inside.astype(np.int64) @ inside.T.astype(np.int64)
    np.fill_diagonal(shared, 0)
    if np.any(shared > 1):
        return Compatibility.STRONG
    return Compatibility.STRICT


def offending_cell_pair(P: AnisotropicDiagram, C: Clustering, X: WeightedDataSet,
                        tol: float = MEMBERSHIP_TOL):
    """First pair of cells witnessing a failure of strict compatibility."""
    inside = P.membership(X.points, tol)
    supp = C.xi > 0
    for i in range(P.k):
        bad = np.flatnonzero(inside[i] != supp[i])
        if bad.size:
            j = int(bad[0])
            others = [l for l in range(P.k) if l != i and inside[l, j]]
            return (i, others[0] if others else i)
    shared = inside.astype(np.int64) @ inside.T.astype(np.int64)
    np.fill_diagonal(shared, 0)
    if np.any(shared > 1):
        i, l = np.argwhere(shared > 1)[0]
        return (int(i), int(l))
    return None


def complementary_sizes(D: np.ndarray, weights: np.ndarray, K: WeightBounds, xi: np.ndarray):
    """Dual prices with the largest uniform reduced-cost margin off the support.

    Among all optimal duals that satisfy complementary slackness with the
    primal ``xi`` this picks one maximizing ``min`` reduced cost over the
    non-support edges. Returns ``(u, sigma, margin)``.
    """
    k, n = D.shape
    w = np.asarray(weights, dtype=np.float64)
    loads = xi @ w
    scale = max(1.0, float(np.abs(D).max()))
    tight = 1e-9 * max(1.0, float(w.sum()))
    at_lo = np.abs(loads - K.lower) <= tight
    at_hi = np.isfinite(K.upper) & (np.abs(loads - K.upper) <= tight)
    # sign of sigma_i = b_i - a_i allowed by complementary slackness
    sig_bounds = []
    for i in range(k):
        lo = -np.inf if at_lo[i] else 0.0
        hi = np.inf if at_hi[i] else 0.0
        sig_bounds.append((lo, hi))
    supp = xi > 0
    # variables: u (n), sigma (k), t
    nv = n + k + 1
    ii, jj = np.nonzero(supp)
    m_eq = ii.size
    A_eq = sparse.csr_matrix(
        (np.r_[np.ones(m_eq), -np.ones(m_eq)],
         (np.r_[np.arange(m_eq), np.arange(m_eq)], np.r_[jj, n + ii])), shape=(m_eq, nv))
    b_eq = D[ii, jj]
    oi, oj = np.nonzero(~supp)
    m_ub = oi.size
    if m_ub:
        A_ub = sparse.csr_matrix(
            (np.r_[np.ones(m_ub), -np.ones(m_ub), np.ones(m_ub)],
             (np.tile(np.arange(m_ub), 3), np.r_[oj, n + oi, np.full(m_ub, n + k)])),
            shape=(m_ub, nv))
        b_ub = D[oi, oj]
    else:
        A_ub, b_ub = None, None
    c = np.zeros(nv)
    c[-1] = -1.0
    bounds = [(None, None)] * n + sig_bounds + [(None, scale)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs-ds")
    if res.status != 0:
        raise WCAError(f"dual margin LP failed: {res.message}")
    u = res.x[:n]
    sigma = res.x[n:n + k]
    margin = float(res.x[-1]) if m_ub else scale
    return u, sigma, margin


@dataclass
class DiagramResult:
    clustering: Clustering
    diagram: AnisotropicDiagram
    certificate: DualCertificate
    compatibility: Compatibility
    margin: float
    attempts: int
    seed: int
    perturbed_weights: np.ndarray | None = field(default=None, repr=False)

    def __iter__(self):
        return iter((self.clustering, self.diagram))


def extract_diagram(X: WeightedDataSet, S: SiteSet, A: NormFamily, K: WeightBounds,
                    seed: int = 0, max_attempts: int = 5) -> DiagramResult:
    """Optimal clustering together with a strictly compatible diagram.

    The diagram uses the sites ``S`` and sizes taken from dual prices of the
    cluster weight constraints. If the pair is not strictly compatible the
    weights are perturbed by factors in ``[1, 1 + 1e-9]`` and the LP is
    re-solved, at most ``max_attempts`` times after the first solve.
    """
    if K.k != S.k:
        raise DimensionError(f"{K.k} weight bounds for {S.k} sites")
    D = distance_matrix(X, S, A)
    rng = np.random.default_rng(seed)
    w = X.weights
    last = None
    for attempt in range(max_attempts + 1):
        if attempt:
            w = X.weights * (1.0 + 1e-9 * rng.random(X.n))
        xi, _, _, _ = solve_transport(D, w, K)
        xi = _truncate(xi)
        u, sigma, margin = complementary_sizes(D, w, K, xi)
        P = AnisotropicDiagram(S.sites, sigma, A)
        C = Clustering(xi)
        cls = check_compatibility(P, C, X)
        a = np.clip(-sigma, 0.0, None)
        b = np.clip(sigma, 0.0, None)
        cert = _certificate(D, w, K, xi, u, a, b, seed=seed, attempts=attempt + 1)
        last = (C, P, cls)
        if cls == Compatibility.STRICT:
            return DiagramResult(C, P, cert, cls, margin, attempt + 1, seed,
                                 None if attempt == 0 else _frozen(w))
    C, P, cls = last
    raise DegeneracyError(
        f"no strictly compatible diagram after {max_attempts + 1} solves "
        f"(last classification {cls.name.lower()})",
        cell_pair=offending_cell_pair(P, C, X))


@dataclass(frozen=True)
class MergingFunction:
    """Surjection ``p`` from ``[n]`` onto ``[n_target]``."""

    mapping: np.ndarray
    n_target: int

    def __post_init__(self):
        p = np.asarray(self.mapping, dtype=np.int64).reshape(-1)
        if p.size and (p.min() < 0 or p.max() >= self.n_target):
            raise WCAError(f"merging function values must lie in [0, {self.n_target})")
        hit = np.bincount(p, minlength=self.n_target)
        if np.any(hit == 0):
            raise WCAError(f"merging function is not surjective: {int(np.argmin(hit))} has no preimage")
        p.setflags(write=False)
        object.__setattr__(self, "mapping", p)

    @classmethod
    def identity(cls, n: int) -> "MergingFunction":
        return cls(np.arange(n), n)

    @property
    def n_source(self) -> int:
        return self.mapping.size

    def preimages(self) -> list[np.ndarray]:
        order = np.argsort(self.mapping, kind="stable")
        cuts = np.cumsum(np.bincount(self.mapping, minlength=self.n_target))[:-1]
        return np.split(order, cuts)

    def merged_weights(self, weights) -> np.ndarray:
        return np.bincount(self.mapping, weights=np.asarray(weights, dtype=np.float64),
                           minlength=self.n_target)

    def check_weights(self, weights, merged_weights, rtol: float = 1e-12) -> None:
        want = self.merged_weights(weights)
        got = np.asarray(merged_weights, dtype=np.float64)
        if got.shape != want.shape or np.any(np.abs(got - want) > rtol * np.abs(want)):
            raise WCAError("merged weights do not conserve the source weights")

    def matrix(self) -> sparse.csr_matrix:
        """``n x n_target`` 0/1 routing matrix."""
        n = self.n_source
        return sparse.csr_matrix((np.ones(n), (np.arange(n), self.mapping)),
                                 shape=(n, self.n_target))

    def compose(self, inner: "MergingFunction") -> "MergingFunction":
        """``inner . self``: first apply ``self`` then ``inner``."""
        if inner.n_source != self.n_target:
            raise DimensionError("merging functions cannot be composed")
        return MergingFunction(inner.mapping[self.mapping], inner.n_target)


def push_forward(p: MergingFunction, weights, merged_weights, C: Clustering) -> Clustering:
    """Clustering ``p(C)`` of the merged set."""
    p.check_weights(weights, merged_weights)
    if C.n != p.n_source:
        raise DimensionError("clustering and merging function disagree in n")
    mass = C.xi * np.asarray(weights, dtype=np.float64)
    merged = np.zeros((C.k, p.n_target))
    for i in range(C.k):
        merged[i] = np.bincount(p.mapping, weights=mass[i], minlength=p.n_target)
    return Clustering(merged / np.asarray(merged_weights, dtype=np.float64))


def extend(p: MergingFunction, C_merged: Clustering) -> Clustering:
    """Extension ``xi_ij = xi~_{i p(j)}``; preserves cluster weights."""
    if C_merged.n != p.n_target:
        raise DimensionError("clustering and merging function disagree in target size")
    return Clustering(C_merged.xi[:, p.mapping])
