"""Coreset construction: pencils of lines, projection, batching and merging.

A coreset stores its extension as a sparse row-stochastic routing matrix
``R`` of shape ``(n, n_coreset)``: ``R[j, b]`` is the share of the weight of
original point ``j`` that ended up in coreset point ``b``. For a plain merging
function ``R`` is 0/1; points split between two batches get two entries. The
extension is ``xi = xi_coreset @ R.T`` and keeps every cluster weight.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .approx import ab_approximate
from .assign import MergingFunction
from .core import (
    Clustering,
    DimensionError,
    NormFamily,
    WCAError,
    WeightedDataSet,
    _frozen,
)

log = logging.getLogger(__name__)

MAX_NET_SIZE = 2_000_000
OFFSET_RTOL = 1e-12


# --------------------------------------------------------------------------
# epsilon nets

def net_constant(d: int) -> float:
    """``c_d`` with ``|Q| <= c_d * eps0**-(d-1)`` for the facet grid."""
    return 2 * d * (4 * math.sqrt(d) + 1) ** (d - 1)


@dataclass(frozen=True)
class EpsilonNet:
    eps0: float
    nodes: np.ndarray        # grid nodes on the surface of [-1, 1]^d
    directions: np.ndarray   # nodes scaled to unit length

    @property
    def d(self) -> int:
        return self.nodes.shape[1]

    def __len__(self):
        return self.nodes.shape[0]


def build_epsilon_net(eps0: float, d: int) -> EpsilonNet:
    """Grid nodes on the ``2d`` facets of the cube with step ``<= eps0/(2 sqrt d)``."""
    if not 0 < eps0 < 0.5:
        raise WCAError(f"eps0 must lie in (0, 1/2), got {eps0!r}")
    if d < 1:
        raise WCAError("dimension must be positive")
    if d == 1:
        nodes = np.array([[-1.0], [1.0]])
    else:
        h = eps0 / (2 * math.sqrt(d))
        m = math.ceil(2.0 / h)
        if 2 * d * (m + 1) ** (d - 1) > MAX_NET_SIZE:
            raise WCAError(f"epsilon net for eps0={eps0}, d={d} would exceed {MAX_NET_SIZE} nodes")
        ticks = np.linspace(-1.0, 1.0, m + 1)
        grid = np.array(list(itertools.product(ticks, repeat=d - 1)))
        facets = []
        for axis in range(d):
            for sign in (-1.0, 1.0):
                f = np.insert(grid, axis, sign, axis=1)
                facets.append(f)
        nodes = np.unique(np.concatenate(facets), axis=0)
    directions = nodes / np.linalg.norm(nodes, axis=1, keepdims=True)
    return EpsilonNet(float(eps0), _frozen(nodes), _frozen(directions))


# --------------------------------------------------------------------------
# projection onto pencils

@dataclass(frozen=True)
class Pencil:
    vertex: np.ndarray
    directions: np.ndarray

    @property
    def lines(self) -> int:
        return self.directions.shape[0]


@dataclass(frozen=True)
class Projection:
    projected: WeightedDataSet
    line_ids: np.ndarray     # global line index per point
    params: np.ndarray       # signed arc-length coordinate along the line
    pencils: list
    n_lines: int
    movement: float          # sum_j w_j ||x_j - xbar_j||^2
    alg: float               # sum_j w_j ||x_j - vertex(j)||^2

    def line_vertex_direction(self, line: int):
        per = self.pencils[0].lines
        pen = self.pencils[line // per]
        return pen.vertex, pen.directions[line % per]


def project_to_pencils(X: WeightedDataSet, approx: Clustering, net: EpsilonNet,
                       chunk: int = 512) -> Projection:
    """Project every point onto a closest line of its own cluster's pencil."""
    if approx.n != X.n:
        raise DimensionError("approximate clustering does not match the data set")
    if not approx.is_integral():
        raise WCAError("the approximate clustering must be integral")
    if net.d != X.d:
        raise DimensionError(f"net dimension {net.d} != data dimension {X.d}")
    labels = approx.labels()
    Q = net.directions
    nq = Q.shape[0]
    pencils = []
    line_ids = np.empty(X.n, dtype=np.int64)
    params = np.empty(X.n)
    proj = np.empty_like(X.points)
    alg = 0.0
    for i in range(approx.k):
        members = np.flatnonzero(labels == i)
        if members.size == 0:
            continue  # void clusters issue no pencil
        w = X.weights[members]
        vertex = w @ X.points[members] / w.sum()
        rank = len(pencils)
        pencils.append(Pencil(_frozen(vertex), Q))
        for start in range(0, members.size, chunk):
            idx = members[start:start + chunk]
            V = X.points[idx] - vertex
            dots = V @ Q.T
            best = np.argmax(np.abs(dots), axis=1)  # first maximum: lowest line index
            t = dots[np.arange(idx.size), best]
            line_ids[idx] = rank * nq + best
            params[idx] = t
            proj[idx] = vertex + t[:, None] * Q[best]
        alg += float(w @ ((X.points[members] - vertex) ** 2).sum(1))
    movement = float(X.weights @ ((X.points - proj) ** 2).sum(1))
    return Projection(WeightedDataSet(proj, X.weights), _frozen(line_ids, np.int64),
                      _frozen(params), pencils, len(pencils) * nq, movement, alg)


# --------------------------------------------------------------------------
# batching

@dataclass(frozen=True)
class Batch:
    line: int
    members: np.ndarray     # indices into the projected set
    portions: np.ndarray    # weight each member contributes to this batch
    centroid: np.ndarray
    weight: float
    variation: float


def batch_lines(Xbar: WeightedDataSet, line_ids, params, threshold: float) -> list[Batch]:
    """Greedy left-to-right batching with fractional splitting of closing points.

    On every line points are scanned by increasing ``params`` (ties by index).
    A batch closes as soon as its Euclidean variation reaches ``threshold``;
    the closing point is split so that the batch hits the threshold exactly.
    """
    if not threshold > 0:
        raise WCAError("batch threshold must be positive")
    line_ids = np.asarray(line_ids)
    params = np.asarray(params, dtype=np.float64)
    order = np.lexsort((np.arange(Xbar.n), params, line_ids))
    close_tol = 1e-12 * threshold
    batches: list[Batch] = []

    cur_line = None
    members: list[int] = []
    portions: list[float] = []
    W = mean = V = 0.0

    def flush():
        nonlocal members, portions, W, mean, V
        if members:
            idx = np.array(members, dtype=np.int64)
            por = np.array(portions)
            cent = por @ Xbar.points[idx] / por.sum()
            batches.append(Batch(cur_line, _frozen(idx, np.int64), _frozen(por),
                                 _frozen(cent), float(por.sum()), float(max(V, 0.0))))
        members, portions = [], []
        W = mean = V = 0.0

    for j in order:
        line = int(line_ids[j])
        if line != cur_line:
            flush()
            cur_line = line
        tau = float(params[j])
        rest = float(Xbar.weights[j])
        while rest > 0:
            if W == 0.0:
                members.append(int(j)); portions.append(rest)
                W, mean, V = rest, tau, 0.0
                rest = 0.0
                break
            a = (tau - mean) ** 2
            full = V + W * rest * a / (W + rest)
            if full < threshold - close_tol:
                members.append(int(j)); portions.append(rest)
                mean = (W * mean + rest * tau) / (W + rest)
                W += rest
                V = full
                rest = 0.0
            elif full <= threshold + close_tol:
                members.append(int(j)); portions.append(rest)
                mean = (W * mean + rest * tau) / (W + rest)
                W += rest
                V = full
                rest = 0.0
                flush()
            else:
                need = threshold - V
                part = need * W / (W * a - need)
                part = min(part, rest)
                if part <= 0.0:
                    flush()
                    continue
                members.append(int(j)); portions.append(part)
                V = V + W * part * a / (W + part)
                mean = (W * mean + part * tau) / (W + part)
                W += part
                flush()
                rest -= part
                if rest <= 1e-15 * float(Xbar.weights[j]):
                    # rounding leftover; give it to the closed batch
                    b = batches[-1]
                    por = b.portions.copy(); por[-1] += rest
                    batches[-1] = Batch(b.line, b.members, _frozen(por), b.centroid,
                                        float(por.sum()), b.variation)
                    rest = 0.0
    flush()
    return batches


def batch_variation(Xbar: WeightedDataSet, batch: Batch) -> float:
    """Euclidean variation of a batch recomputed from the projected points."""
    P = Xbar.points[batch.members]
    c = batch.portions @ P / batch.portions.sum()
    return float(batch.portions @ ((P - c) ** 2).sum(1))


@dataclass(frozen=True)
class BatchMerge:
    merged: WeightedDataSet
    routing: sparse.csr_matrix    # (n, n_batches), row-stochastic
    delta_plus: float
    delta_minus: float
    total_variation: float
    n_splits: int


def merge_batches(batches: list[Batch], n_source: int, A: NormFamily) -> BatchMerge:
    """One point per batch at the batch centroid carrying the batch weight."""
    if not batches:
        raise WCAError("no batches to merge")
    pts = np.array([b.centroid for b in batches])
    wts = np.array([b.weight for b in batches])
    rows = np.concatenate([b.members for b in batches])
    cols = np.concatenate([np.full(b.members.size, bi) for bi, b in enumerate(batches)])
    vals = np.concatenate([b.portions for b in batches])
    routing = sparse.csr_matrix((vals, (rows, cols)), shape=(n_source, len(batches)))
    src_w = np.asarray(routing.sum(axis=1)).ravel()
    routing = sparse.diags(1.0 / src_w) @ routing
    total_var = float(sum(b.variation for b in batches))
    n_splits = int(np.sum(np.diff(routing.indptr) > 1))
    return BatchMerge(WeightedDataSet(pts, wts), routing.tocsr(),
                      A.lam_max * total_var, A.lam_min * total_var, total_var, n_splits)


# --------------------------------------------------------------------------
# coresets

@dataclass(frozen=True)
class Coreset:
    """Compressed set with extension routing, offsets and accuracy certificate."""

    data: WeightedDataSet
    routing: sparse.csr_matrix
    source_weights: np.ndarray
    delta_plus: float
    delta_minus: float
    eps: float
    delta: float
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        R = sparse.csr_matrix(self.routing, dtype=np.float64)
        w = np.asarray(self.source_weights, dtype=np.float64)
        if R.shape != (w.size, self.data.n):
            raise DimensionError(f"routing shape {R.shape} does not match "
                                 f"({w.size}, {self.data.n})")
        if R.nnz and R.data.min() < 0:
            raise WCAError("routing shares must be nonnegative")
        rows = np.asarray(R.sum(axis=1)).ravel()
        if np.any(np.abs(rows - 1.0) > 1e-12):
            raise WCAError("routing rows must sum to one")
        routed = R.T @ w
        if np.any(np.abs(routed - self.data.weights) > 1e-12 * np.maximum(routed, 1e-300) + 1e-300):
            raise WCAError("coreset weights do not conserve the routed source weights")
        if abs(self.data.total_weight - w.sum()) > 1e-12 * w.sum():
            raise WCAError("coreset total weight differs from the source total weight")
        if not (self.delta_plus >= 0 and self.delta_minus >= 0):
            raise WCAError(f"offsets must be nonnegative (got {self.delta_plus}, {self.delta_minus})")
        if self.delta < 1:
            raise WCAError("delta must be at least 1")
        if self.delta_plus > self.delta * self.delta_minus * (1 + OFFSET_RTOL):
            raise WCAError("offsets violate delta_plus <= delta * delta_minus")
        if not 0 <= self.eps:
            raise WCAError("eps must be nonnegative")
        object.__setattr__(self, "routing", R)
        object.__setattr__(self, "source_weights", _frozen(w))

    @property
    def size(self) -> int:
        return self.data.n

    @property
    def n_source(self) -> int:
        return self.source_weights.size

    def merging_function(self) -> MergingFunction | None:
        """Plain merging function if no point was split, else ``None``."""
        R = self.routing
        if np.all(np.diff(R.indptr) == 1):
            return MergingFunction(R.indices.copy(), self.data.n)
        return None

    def extend(self, C: Clustering) -> Clustering:
        """Full-data clustering ``f(C)``; cluster weights are preserved."""
        if C.n != self.data.n:
            raise DimensionError("clustering does not match the coreset size")
        xi = (self.routing @ C.xi.T).T
        xi = np.asarray(xi)
        return Clustering(xi / xi.sum(axis=0))

    def push(self, C: Clustering) -> Clustering:
        """Clustering of the coreset induced by a full-data clustering."""
        if C.n != self.n_source:
            raise DimensionError("clustering does not match the source size")
        mass = C.xi * self.source_weights
        merged = np.asarray((self.routing.T @ mass.T).T)
        return Clustering(merged / self.data.weights)

    @classmethod
    def identity(cls, X: WeightedDataSet, eps: float = 0.0) -> "Coreset":
        return cls(X, sparse.identity(X.n, format="csr"), X.weights, 0.0, 0.0, eps, 1.0,
                   {"kind": "identity"})

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        R = self.routing.tocsc()
        pre = []
        for b in range(self.data.n):
            lo, hi = R.indptr[b], R.indptr[b + 1]
            pre.append([[int(j), float(s).hex()] for j, s in zip(R.indices[lo:hi], R.data[lo:hi])])
        return {
            "format": "wca-coreset/1",
            "dimension": self.data.d,
            "points": [[float(v).hex() for v in row] for row in self.data.points],
            "weights": [float(v).hex() for v in self.data.weights],
            "source_weights": [float(v).hex() for v in self.source_weights],
            "preimages": pre,
            "delta_plus": float(self.delta_plus).hex(),
            "delta_minus": float(self.delta_minus).hex(),
            "eps": float(self.eps).hex(),
            "delta": float(self.delta).hex(),
            "provenance": _jsonable(self.provenance),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "Coreset":
        fh = float.fromhex
        d = int(doc["dimension"])
        pts = np.array([[fh(v) for v in row] for row in doc["points"]]).reshape(-1, d)
        wts = np.array([fh(v) for v in doc["weights"]])
        src = np.array([fh(v) for v in doc["source_weights"]])
        rows, cols, vals = [], [], []
        for b, pairs in enumerate(doc["preimages"]):
            for j, s in pairs:
                rows.append(j); cols.append(b); vals.append(fh(s))
        R = sparse.csr_matrix((vals, (rows, cols)), shape=(src.size, len(wts)))
        R.sort_indices()
        return cls(WeightedDataSet(pts, wts), R, src, fh(doc["delta_plus"]),
                   fh(doc["delta_minus"]), fh(doc["eps"]), fh(doc["delta"]),
                   doc.get("provenance", {}))

    @classmethod
    def from_json(cls, text: str) -> "Coreset":
        return cls.from_dict(json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


@dataclass(frozen=True)
class CoresetConfig:
    beta: int = 1
    repeats: int = 5
    seed: int = 0
    alpha: float = 16.0
    stage_eps: tuple | None = None   # (projection, batching); default eps/3 each


def size_bound(alpha: float, lam_max: float, k: int, eps: float, n_lines: int) -> float:
    """Closed-form size bound ``(64 alpha lam_max k / eps^2 + k) |L|``."""
    return (64.0 * alpha * lam_max * k / eps ** 2 + k) * n_lines


def build_coreset(X: WeightedDataSet, k: int, eps: float, A: NormFamily | None = None,
                  config: CoresetConfig = CoresetConfig()) -> Coreset:
    """Three-step construction: approximate clustering, pencil projection, batching."""
    if not 0 < eps <= 0.5:
        raise WCAError(f"eps must lie in (0, 1/2], got {eps!r}")
    A = NormFamily.identity(k, X.d) if A is None else A
    if A.k != k or A.d != X.d:
        raise DimensionError("norm family does not match k and the data dimension")
    eps1, eps2 = config.stage_eps or (eps / 3.0, eps / 3.0)
    approx, alg = ab_approximate(X, k, beta=config.beta, repeats=config.repeats, seed=config.seed)
    prov = {"alg": alg, "alpha": config.alpha, "beta": config.beta, "seed": config.seed,
            "repeats": config.repeats, "eps_projection": eps1, "eps_batching": eps2, "k": k,
            "n": X.n, "lam_max": A.lam_max, "lam_min": A.lam_min}
    if alg == 0.0:
        # every point is its own center: the data set is its own exact coreset
        prov.update(kind="identity", n_batches=X.n, n_lines=0, size_bound=float(X.n))
        return Coreset(X, sparse.identity(X.n, format="csr"), X.weights, 0.0, 0.0, eps,
                       A.condition, prov)
    eps0 = eps1 / 4.0 * math.sqrt(A.lam_min / (config.alpha * A.lam_max))
    net = build_epsilon_net(eps0, X.d)
    proj = project_to_pencils(X, approx, net)
    threshold = eps2 ** 2 / (32.0 * config.alpha * k * A.lam_max * proj.n_lines) * alg
    batches = batch_lines(proj.projected, proj.line_ids, proj.params, threshold)
    merged = merge_batches(batches, X.n, A)
    prov.update(
        kind="pencil-batching", eps0=eps0, net_size=len(net), n_lines=proj.n_lines,
        k_hat=len(proj.pencils), movement=proj.movement, threshold=threshold,
        n_batches=len(batches), n_splits=merged.n_splits,
        total_variation=merged.total_variation,
        run_bound=2.0 * alg / threshold + k * proj.n_lines,
        size_bound=size_bound(config.alpha, A.lam_max, k, eps2, proj.n_lines),
        composed_eps=eps1 + eps2 + eps1 * eps2,
    )
    log.debug("coreset: n=%d -> %d points on %d lines", X.n, len(batches), proj.n_lines)
    return Coreset(merged.merged, merged.routing, X.weights, merged.delta_plus,
                   merged.delta_minus, eps, A.condition, prov)


def compose(outer: Coreset, inner: Coreset) -> Coreset:
    """Coreset of a coreset: routings multiply, offsets add."""
    if inner.n_source != outer.size or not np.allclose(
            inner.source_weights, outer.data.weights, rtol=1e-12, atol=0):
        raise DimensionError("inner coreset was not built on the outer compressed set")
    e1, e2 = outer.eps, inner.eps
    routing = (outer.routing @ inner.routing).tocsr()
    prov = {"kind": "composed", "outer": outer.provenance, "inner": inner.provenance}
    return Coreset(inner.data, routing, outer.source_weights,
                   outer.delta_plus + inner.delta_plus, outer.delta_minus + inner.delta_minus,
                   e1 + e2 + e1 * e2, max(outer.delta, inner.delta), prov)


# --------------------------------------------------------------------------
# movement-based coresets

@dataclass(frozen=True)
class MovementCertificate:
    certified: bool
    movement: float
    bound: float
    heuristic: bool

    def __bool__(self):
        return self.certified


def movement_coreset_certify(X: WeightedDataSet, Xt: WeightedDataSet, p: MergingFunction,
                             eps: float, A: NormFamily, opt_lower_bound: float,
                             heuristic: bool = False) -> MovementCertificate:
    """Check ``sum_j w_j ||x_j - x~_p(j)||^2 <= eps^2 lam_min / (16 lam_max) * LB``."""
    p.check_weights(X.weights, Xt.weights)
    moved = float(X.weights @ ((X.points - Xt.points[p.mapping]) ** 2).sum(1))
    bound = eps ** 2 * A.lam_min / (16.0 * A.lam_max) * opt_lower_bound
    return MovementCertificate(moved <= bound, moved, bound, heuristic)


def movement_coreset(X: WeightedDataSet, Xt: WeightedDataSet, p: MergingFunction,
                     eps: float) -> Coreset:
    """Linear coreset object (zero offsets, ``delta = 1``) for a merging function."""
    return Coreset(Xt, p.matrix(), X.weights, 0.0, 0.0, eps, 1.0, {"kind": "movement"})
