"""Domain types and cost functions for weight-constrained anisotropic clustering.

All arrays are stored as read-only float64 numpy arrays. Points are rows,
clusterings are ``k x n`` matrices with ``xi[i, j]`` the fraction of point
``j`` assigned to cluster ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COLUMN_SUM_TOL = 1e-9
VOID_REL_TOL = 1e-12
SYMMETRY_TOL = 1e-12


class WCAError(ValueError):
    """Base class for all errors raised by this package."""


class DimensionError(WCAError):
    pass


class InfeasibleBoundsError(WCAError):
    pass


def _frozen(a, dtype=np.float64):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WeightedDataSet:
    points: np.ndarray
    weights: np.ndarray
    total_weight: float = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise DimensionError("points must be an (n, d) array")
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if pts.shape[0] != w.shape[0]:
            raise DimensionError(
                f"{pts.shape[0]} points but {w.shape[0]} weights")
        if pts.shape[0] < 1:
            raise WCAError("a weighted data set needs at least one point")
        if not np.all(np.isfinite(pts)):
            bad = int(np.argwhere(~np.isfinite(pts))[0, 0])
            raise WCAError(f"point {bad} has non-finite coordinates")
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            bad = int(np.argwhere(~((w > 0) & np.isfinite(w)))[0, 0])
            raise WCAError(f"weight {bad} is not a positive finite number: {w[bad]!r}")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "total_weight", float(w.sum()))

    @classmethod
    def unit(cls, points) -> "WeightedDataSet":
        pts = np.asarray(points, dtype=np.float64)
        return cls(pts, np.ones(len(pts)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def centroid(self) -> np.ndarray:
        return self.weights @ self.points / self.total_weight

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class Clustering:
    """Fractional assignment; columns are probability vectors."""

    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=np.float64)
        if xi.ndim != 2:
            raise DimensionError("xi must be a (k, n) matrix")
        if np.any(xi < 0) or not np.all(np.isfinite(xi)):
            i, j = np.argwhere(~(xi >= 0))[0]
            raise WCAError(f"xi[{i}, {j}] = {xi[i, j]!r} is negative or not finite")
        sums = xi.sum(axis=0)
        bad = np.abs(sums - 1.0) > COLUMN_SUM_TOL
        if np.any(bad):
            j = int(np.argmax(bad))
            raise WCAError(f"column {j} of xi sums to {sums[j]!r}, not 1")
        object.__setattr__(self, "xi", _frozen(xi))

    @classmethod
    def from_labels(cls, labels, k: int) -> "Clustering":
        labels = np.asarray(labels, dtype=int)
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise DimensionError(f"labels must lie in [0, {k})")
        xi = np.zeros((k, labels.size))
        xi[labels, np.arange(labels.size)] = 1.0
        return cls(xi)

    @property
    def k(self) -> int:
        return self.xi.shape[0]

    @property
    def n(self) -> int:
        return self.xi.shape[1]

    def cluster_weights(self, weights) -> np.ndarray:
        return self.xi @ np.asarray(weights, dtype=np.float64)

    def support(self, i: int, tol: float = 0.0) -> np.ndarray:
        return np.flatnonzero(self.xi[i] > tol)

    def is_integral(self, tol: float = 0.0) -> bool:
        return bool(np.all((self.xi <= tol) | (self.xi >= 1.0 - tol)))

    def labels(self) -> np.ndarray:
        """Dominant cluster per point (lowest index on ties)."""
        return np.argmax(self.xi, axis=0)


@dataclass(frozen=True)
class WeightBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionError("lower and upper bounds differ in length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(np.isinf(lo)):
            raise WCAError("lower bounds must be finite and upper bounds not NaN")
        if np.any(lo < 0):
            raise WCAError(f"negative lower bound for cluster {int(np.argmax(lo < 0))}")
        if np.any(lo > hi):
            i = int(np.argmax(lo > hi))
            raise WCAError(f"cluster {i}: lower bound {lo[i]} exceeds upper bound {hi[i]}")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @classmethod
    def unconstrained(cls, k: int) -> "WeightBounds":
        return cls(np.zeros(k), np.full(k, np.inf))

    @classmethod
    def balanced(cls, total: float, k: int, slack: float = 0.0) -> "WeightBounds":
        """Bounds ``total/k * (1 -+ slack)`` for every cluster."""
        share = total / k
        return cls(np.full(k, share * (1 - slack)), np.full(k, share * (1 + slack)))

    @property
    def k(self) -> int:
        return self.lower.shape[0]

    def is_unconstrained(self, total: float) -> bool:
        return bool(np.all(self.lower <= 0) and np.all(self.upper >= total))

    def check_feasible(self, total: float, rtol: float = 1e-12) -> None:
        lo, hi = float(self.lower.sum()), float(self.upper.sum())
        slack = rtol * max(1.0, abs(total))
        if lo > total + slack or hi < total - slack:
            raise InfeasibleBoundsError(
                f"infeasible weight bounds: sum of lower bounds {lo!r}, "
                f"total weight {total!r}, sum of upper bounds {hi!r}")

    def satisfied_by(self, cluster_weights, rtol: float = 1e-9) -> bool:
        w = np.asarray(cluster_weights)
        tol = rtol * max(1.0, float(np.sum(w)))
        return bool(np.all(w >= self.lower - tol) and np.all(w <= self.upper + tol))


@dataclass(frozen=True)
class NormFamily:
    """One symmetric positive definite matrix per cluster."""

    matrices: np.ndarray
    lam_max: float = field(init=False)
    lam_min: float = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=np.float64)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise DimensionError("matrices must have shape (k, d, d)")
        asym = np.abs(m - m.transpose(0, 2, 1)).max(initial=0.0)
        scale = max(1.0, np.abs(m).max(initial=0.0))
        if asym > SYMMETRY_TOL * scale:
            raise WCAError(f"matrix family is not symmetric (max asymmetry {asym:.3g})")
        m = 0.5 * (m + m.transpose(0, 2, 1))
        eig = np.linalg.eigvalsh(m)
        if np.any(eig <= 0):
            i = int(np.argmax(np.any(eig <= 0, axis=1)))
            raise WCAError(f"matrix {i} is not positive definite")
        object.__setattr__(self, "matrices", _frozen(m))
        object.__setattr__(self, "lam_max", float(eig.max()))
        object.__setattr__(self, "lam_min", float(eig.min()))

    @classmethod
    def identity(cls, k: int, d: int) -> "NormFamily":
        return cls(np.broadcast_to(np.eye(d), (k, d, d)))

    @property
    def k(self) -> int:
        return self.matrices.shape[0]

    @property
    def d(self) -> int:
        return self.matrices.shape[1]

    @property
    def condition(self) -> float:
        return self.lam_max / self.lam_min

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.matrices, np.broadcast_to(np.eye(self.d), self.matrices.shape)))


@dataclass(frozen=True)
class SiteSet:
    sites: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sites, dtype=np.float64)
        if s.ndim != 2:
            raise DimensionError("sites must be a (k, d) array")
        if not np.all(np.isfinite(s)):
            raise WCAError("sites must have finite coordinates")
        object.__setattr__(self, "sites", _frozen(s))

    @property
    def k(self) -> int:
        return self.sites.shape[0]

    @property
    def d(self) -> int:
        return self.sites.shape[1]


def _check_dims(X: WeightedDataSet, C: Clustering | None = None,
                S: SiteSet | None = None, A: NormFamily | None = None) -> None:
    if C is not None and C.n != X.n:
        raise DimensionError(f"clustering has {C.n} columns, data set has {X.n} points")
    ks = {name: obj.k for name, obj in (("clustering", C), ("sites", S), ("norms", A))
          if obj is not None}
    if len(set(ks.values())) > 1:
        raise DimensionError(f"cluster counts disagree: {ks}")
    for name, obj in (("sites", S), ("norms", A)):
        if obj is not None and obj.d != X.d:
            raise DimensionError(f"{name} live in dimension {obj.d}, points in {X.d}")


def sq_norm(A: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row-wise ``v^T A v`` for the rows of ``V``."""
    return np.einsum("nd,de,ne->n", V, A, V)


def distance_matrix(X: WeightedDataSet, S: SiteSet, A: NormFamily) -> np.ndarray:
    """``k x n`` matrix of squared ellipsoidal distances ``||x_j - s_i||_{A_i}^2``."""
    _check_dims(X, S=S, A=A)
    out = np.empty((S.k, X.n))
    for i in range(S.k):
        out[i] = sq_norm(A.matrices[i], X.points - S.sites[i])
    return out


def cost(X: WeightedDataSet, C: Clustering, S: SiteSet, A: NormFamily) -> float:
    _check_dims(X, C, S, A)
    D = distance_matrix(X, S, A)
    return float(np.sum(C.xi * D * X.weights))


def centroid_and_weight(X: WeightedDataSet, C: Clustering, i: int) -> tuple[np.ndarray, float]:
    """Centroid and weight of cluster ``i``; a void cluster has centroid 0."""
    _check_dims(X, C)
    if not 0 <= i < C.k:
        raise IndexError(f"cluster index {i} out of range [0, {C.k})")
    mass = C.xi[i] * X.weights
    w = float(mass.sum())
    if w <= VOID_REL_TOL * X.total_weight:
        return np.zeros(X.d), 0.0
    return mass @ X.points / w, w


def centroids(X: WeightedDataSet, C: Clustering) -> tuple[np.ndarray, np.ndarray]:
    """All centroids ``(k, d)`` and cluster weights ``(k,)``."""
    pairs = [centroid_and_weight(X, C, i) for i in range(C.k)]
    return np.array([c for c, _ in pairs]).reshape(C.k, X.d), np.array([w for _, w in pairs])


def variation(X0: WeightedDataSet, A=None) -> float:
    """Weighted sum of squared ``A``-distances to the centroid of ``X0``."""
    A = np.eye(X0.d) if A is None else np.asarray(A, dtype=np.float64)
    return float(X0.weights @ sq_norm(A, X0.points - X0.centroid()))


def opt_site_cost(X: WeightedDataSet, C: Clustering, A: NormFamily) -> float:
    """Cost of ``C`` with every non-void cluster served from its centroid."""
    _check_dims(X, C, A=A)
    total = 0.0
    for i in range(C.k):
        mass = C.xi[i] * X.weights
        w = mass.sum()
        if w <= VOID_REL_TOL * X.total_weight:
            continue
        c = mass @ X.points / w
        total += float(mass @ sq_norm(A.matrices[i], X.points - c))
    return total
