"""Empirical certification harness.

Every check samples site sets, solves the assignment LP on both the full data
and the coreset, and compares costs against the coreset inequalities. Reports
carry seeds, worst observed ratios and every violation; violations are report
content and never raised.
"""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .approx import alternate_sites
from .assign import AnisotropicDiagram, solve_transport, _truncate
from .core import (
    Clustering,
    NormFamily,
    SiteSet,
    WCAError,
    WeightBounds,
    WeightedDataSet,
    distance_matrix,
    opt_site_cost,
)
from .coreset import Coreset

SLACK = 1e-7
COINCIDE_TOL = 1e-10
ENVELOPE_TOL = 1e-9
PROBE_RADII = (2.0, 10.0, 100.0, 1e4)


def workers() -> int:
    """Thread count for independent trials, capped by ``WCA_THREADS``."""
    cap = os.environ.get("WCA_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise WCAError(f"WCA_THREADS must be an integer, got {cap!r}") from None
    return min(n, 4)


def _ordered_map(fn, items):
    items = list(items)
    nw = workers()
    if nw <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=nw) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class Instance:
    X: WeightedDataSet
    k: int
    A: NormFamily
    K: WeightBounds

    @classmethod
    def create(cls, X: WeightedDataSet, k: int, A: NormFamily | None = None,
               K: WeightBounds | None = None) -> "Instance":
        A = NormFamily.identity(k, X.d) if A is None else A
        K = WeightBounds.unconstrained(k) if K is None else K
        K.check_feasible(X.total_weight)
        return cls(X, k, A, K)


@dataclass
class CheckReport:
    check: str
    status: str
    seed: int
    trials: int
    worst: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return self.status in ("pass", "consistent")

    def to_dict(self) -> dict:
        return {"check": self.check, "status": self.status, "passed": self.passed,
                "seed": self.seed, "trials": self.trials, "worst": self.worst,
                "violations": self.violations, "details": self.details,
                "elapsed_seconds": self.elapsed}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), default=_plain, **kw)

    def to_markdown(self) -> str:
        lines = [f"### {self.check}: {self.status.upper()}", "",
                 f"- seed: {self.seed}", f"- trials: {self.trials}",
                 f"- elapsed: {self.elapsed:.3f} s"]
        for key, val in self.worst.items():
            lines.append(f"- worst {key}: {val:.9g}")
        for key, val in self.details.items():
            if isinstance(val, (int, float, str, bool)):
                lines.append(f"- {key}: {val}")
        if self.violations:
            lines += ["", "| trial | kind | lhs | rhs |", "|---|---|---|---|"]
            for v in self.violations[:50]:
                lines.append(f"| {v['trial']} | {v['kind']} | {v['lhs']:.9g} | {v['rhs']:.9g} |")
        return "\n".join(lines) + "\n"


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


# --------------------------------------------------------------------------
# sampling

def sample_sites(X: WeightedDataSet, k: int, rng, family: str = "box") -> SiteSet:
    """Random sites for a harness trial.

    ``box`` samples the data bounding box inflated by 50%. The adversarial
    families put sites on data points, stack them on one location, or push
    one site far away.
    """
    lo, hi = X.points.min(axis=0), X.points.max(axis=0)
    mid, half = (lo + hi) / 2, (hi - lo) / 2 * 1.5
    half = np.where(half > 0, half, 1.0)
    box = mid + half * rng.uniform(-1.0, 1.0, size=(k, X.d))
    if family == "box":
        return SiteSet(box)
    if family == "data":
        return SiteSet(X.points[rng.choice(X.n, size=k, replace=X.n < k)])
    if family == "coincident":
        return SiteSet(np.repeat(box[:1], k, axis=0))
    if family == "far":
        u = rng.normal(size=X.d)
        box[0] = mid + 1e3 * float(np.linalg.norm(half)) * u / np.linalg.norm(u)
        return SiteSet(box)
    raise WCAError(f"unknown site family {family!r}")


def _trial_family(t: int) -> str:
    # mostly box samples, every tenth trial from an adversarial family
    return ("data", "coincident", "far")[(t // 10) % 3] if t % 10 == 9 else "box"


def _targets(total: float, K: WeightBounds, rng) -> np.ndarray:
    lo = K.lower.copy()
    cap = np.minimum(K.upper, total) - lo
    t = lo.copy()
    rem = total - lo.sum()
    p = rng.dirichlet(np.ones(K.k))
    for _ in range(K.k + 1):
        room = cap - (t - lo)
        live = room > 1e-15 * total
        if rem <= 1e-15 * total or not live.any():
            break
        give = rem * p[live] / p[live].sum()
        give = np.minimum(give, room[live])
        t[live] += give
        rem -= give.sum()
    if rem > 1e-9 * total:
        raise WCAError("could not distribute weight within the bounds")
    return t


def _northwest(w: np.ndarray, targets: np.ndarray, rng) -> np.ndarray:
    """North-west corner fill of random cluster targets in random point order."""
    k, n = targets.size, w.size
    order = rng.permutation(k)
    need = targets[order].copy()
    tiny = 1e-15 * w.sum()
    y = np.zeros((k, n))
    c = 0
    for j in rng.permutation(n):
        m = w[j]
        while m > tiny and c < k - 1:
            take = min(m, need[c])
            y[order[c], j] += take
            m -= take
            need[c] -= take
            if need[c] <= tiny:
                c += 1
        if m > 0:
            y[order[c], j] += m
    return y / y.sum(axis=0)


def random_feasible_clustering(w, K: WeightBounds, rng, mix: bool = True) -> Clustering:
    """Random fractional clustering whose cluster weights satisfy ``K``."""
    w = np.asarray(w, dtype=np.float64)
    total = float(w.sum())
    K.check_feasible(total)
    xi = _northwest(w, _targets(total, K, rng), rng)
    if mix and rng.random() < 0.5:
        lam = rng.random()
        xi = (1 - lam) * xi + lam * _northwest(w, _targets(total, K, rng), rng)
    xi = np.where(xi < 1e-12, 0.0, xi)
    return Clustering(xi / xi.sum(axis=0))


def _lp(X, S, inst: Instance):
    D = distance_matrix(X, S, inst.A)
    xi, _, _, _ = solve_transport(D, X.weights, inst.K)
    xi = _truncate(xi)
    return Clustering(xi), float(np.sum(xi * D * X.weights)), D


def _cost(C: Clustering, D, w) -> float:
    return float(np.sum(C.xi * D * w))


def _ratio(lhs, rhs):
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs <= 0 else math.inf


# --------------------------------------------------------------------------
# coreset inequalities

def check_coreset_properties(inst: Instance, coreset: Coreset, trials: int = 100,
                             seed: int = 0, n_random: int = 3,
                             slack: float = SLACK) -> CheckReport:
    """Both coreset inequalities on random site sets.

    (a) ``(1-eps) cost(X, f(C~), S) <= cost(X~, C~, S) + Delta+`` for the LP
    optimal coreset clustering and ``n_random`` random feasible ones;
    (b) ``cost_K(X~, S) + Delta- <= (1+eps) cost_K(X, S)``.
    """
    t0 = time.perf_counter()
    X, Xt, eps = inst.X, coreset.data, coreset.eps
    if coreset.n_source != X.n:
        raise WCAError("coreset was built for a different data set")

    def one(t):
        rng = np.random.default_rng([seed, t])
        S = sample_sites(X, inst.k, rng, _trial_family(t))
        _, opt_full, D = _lp(X, S, inst)
        Ct, opt_core, Dt = _lp(Xt, S, inst)
        out = []
        lhs, rhs = opt_core + coreset.delta_minus, (1 + eps) * opt_full
        out.append(("b", lhs, rhs))
        cands = [Ct] + [random_feasible_clustering(Xt.weights, inst.K, rng)
                        for _ in range(n_random)]
        for C in cands:
            full = _cost(coreset.extend(C), D, X.weights)
            out.append(("a", (1 - eps) * full, _cost(C, Dt, Xt.weights) + coreset.delta_plus))
        return out

    worst = {"a": 0.0, "b": 0.0}
    violations = []
    for t, rows in enumerate(_ordered_map(one, range(trials))):
        for kind, lhs, rhs in rows:
            r = _ratio(lhs, rhs)
            worst[kind] = max(worst[kind], r)
            if lhs > rhs * (1 + slack) + 1e-300:
                violations.append({"trial": t, "kind": kind, "lhs": lhs, "rhs": rhs})
    status = "fail" if violations else "pass"
    return CheckReport("coreset_properties", status, seed, trials, worst, violations,
                       {"eps": eps, "delta_plus": coreset.delta_plus,
                        "delta_minus": coreset.delta_minus, "slack": slack,
                        "coreset_size": coreset.size, "n": X.n,
                        "clusterings_per_trial": n_random + 1},
                       time.perf_counter() - t0)


def check_centroid_form(inst: Instance, coreset: Coreset, trials: int = 50,
                        seed: int = 0, starts: int = 5) -> CheckReport:
    """Centroid-form inequalities.

    (a') ``(1-eps) cost(X, f(C~)) <= cost(X~, C~) + Delta+`` with each side at
    its own centroids, checked exactly on random feasible ``C~``.
    (b') ``OPT_K(X~) + Delta- <= (1+eps) OPT_K(X)`` with best-found optima on
    both sides, so it is reported as consistent rather than certified.
    """
    t0 = time.perf_counter()
    X, Xt, eps = inst.X, coreset.data, coreset.eps
    rng = np.random.default_rng([seed, 0x5EED])
    violations = []
    worst_a = 0.0
    for t in range(trials):
        C = random_feasible_clustering(Xt.weights, inst.K, rng)
        lhs = (1 - eps) * opt_site_cost(X, coreset.extend(C), inst.A)
        rhs = opt_site_cost(Xt, C, inst.A) + coreset.delta_plus
        worst_a = max(worst_a, _ratio(lhs, rhs))
        if lhs > rhs * (1 + SLACK):
            violations.append({"trial": t, "kind": "a_prime", "lhs": lhs, "rhs": rhs})
    _, sites, opt_full = alternate_sites(X, inst.k, inst.A, inst.K, starts=starts, seed=seed)
    _, _, opt_core = alternate_sites(Xt, inst.k, inst.A, inst.K, starts=starts, seed=seed,
                                     init_sites=sites.sites)
    lhs, rhs = opt_core + coreset.delta_minus, (1 + eps) * opt_full
    b_ok = lhs <= rhs * (1 + 1e-6)
    if not b_ok:
        violations.append({"trial": -1, "kind": "b_prime", "lhs": lhs, "rhs": rhs})
    status = "fail" if any(v["kind"] == "a_prime" for v in violations) else (
        "consistent" if b_ok else "inconsistent")
    return CheckReport("centroid_form", status, seed, trials,
                       {"a_prime": worst_a, "b_prime": _ratio(lhs, rhs)}, violations,
                       {"a_prime": "certified" if worst_a <= 1 + SLACK else "violated",
                        "b_prime": "consistent" if b_ok else "inconsistent",
                        "best_found_opt_full": opt_full, "best_found_opt_coreset": opt_core},
                       time.perf_counter() - t0)


def check_approx_preservation(inst: Instance, coreset: Coreset, gamma: float = 2.0,
                              trials: int = 50, seed: int = 0,
                              targets=None) -> CheckReport:
    """Extended near-optimal coreset clusterings stay near-optimal.

    The coreset is taken as built at accuracy ``eps/3``, so the guarantee is
    ``cost(X, f(C~), S) <= (1+eps) g cost_K(X, S)`` with ``eps = 3 coreset.eps``
    and ``g = max(measured ratio, delta)``. Degraded clusterings are convex
    mixes of the LP optimum with a random feasible clustering.
    """
    if gamma < coreset.delta:
        raise WCAError(f"gamma={gamma} is below the coreset delta={coreset.delta}")
    t0 = time.perf_counter()
    X, Xt = inst.X, coreset.data
    eps = 3.0 * coreset.eps

    def one(t):
        rng = np.random.default_rng([seed, t])
        S = sample_sites(X, inst.k, rng)
        _, opt_full, D = _lp(X, S, inst)
        Cs, opt_core, Dt = _lp(Xt, S, inst)
        goal = float(targets[t % len(targets)]) if targets is not None else rng.uniform(1.0, gamma)
        R = random_feasible_clustering(Xt.weights, inst.K, rng)
        c_r = _cost(R, Dt, Xt.weights)
        lam = 1.0 if c_r <= goal * opt_core else (goal - 1.0) * opt_core / (c_r - opt_core)
        C = Clustering((1 - lam) * Cs.xi + lam * R.xi)
        c_tilde = _cost(C, Dt, Xt.weights)
        if opt_core <= 0:
            return None
        g_hat = c_tilde / opt_core
        lhs = _cost(coreset.extend(C), D, X.weights)
        return g_hat, lhs, (1 + eps) * max(g_hat, coreset.delta) * opt_full

    violations, worst, g_max, skipped = [], 0.0, 0.0, 0
    for t, row in enumerate(_ordered_map(one, range(trials))):
        if row is None:
            skipped += 1
            continue
        g_hat, lhs, rhs = row
        g_max = max(g_max, g_hat)
        worst = max(worst, _ratio(lhs, rhs))
        if lhs > rhs * (1 + SLACK):
            violations.append({"trial": t, "kind": "approx", "lhs": lhs, "rhs": rhs})
    return CheckReport("approx_preservation", "fail" if violations else "pass", seed, trials,
                       {"ratio": worst}, violations,
                       {"eps": eps, "gamma": gamma, "max_measured_gamma": g_max,
                        "zero_cost_trials": skipped}, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# lower envelopes along lines

@dataclass(frozen=True)
class Dissection:
    breakpoints: np.ndarray
    pieces: list        # (lo, hi, winners) for the open pieces between breakpoints
    intervals: list     # (lo, hi, cell): connected components of each cell on the line
    coincident: list    # pairs whose restrictions agree identically

    @property
    def count(self) -> int:
        return len(self.intervals)

    def cell_at(self, t) -> np.ndarray:
        """Cell of the open piece containing each parameter in ``t``."""
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.breakpoints, t)
        return np.array([min(self.pieces[i][2]) for i in np.atleast_1d(idx)])


def _restrict(P: AnisotropicDiagram, point, direction):
    """Coefficients ``(a, b, c)`` of ``g_i(point + t direction) = a t^2 + b t + c``."""
    p = np.asarray(point, dtype=np.float64)
    v = np.asarray(direction, dtype=np.float64)
    coef = np.empty((P.k, 3))
    for i in range(P.k):
        M = P.norms.matrices[i]
        r = p - P.sites[i]
        coef[i] = (v @ M @ v, 2.0 * v @ M @ r, r @ M @ r + P.sizes[i])
    return coef


def _quad_roots(a, b, c, scale):
    tiny = COINCIDE_TOL * scale
    if abs(a) <= tiny:
        if abs(b) <= tiny:
            return []
        return [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b))
    roots = [q / a]
    if q != 0:
        roots.append(c / q)
    return roots


def dissect_line(P: AnisotropicDiagram, point, direction, strict: bool = False) -> Dissection:
    """Cells met by the line ``point + t direction`` in order of ``t``.

    Breakpoints are the real roots of all pairwise differences of the
    restricted quadratics. Each cell's set on the line is split into its
    connected components; a touching point counts as a singleton component.
    With ``strict=True`` the count is asserted to be at most ``2k - 1``.
    """
    coef = _restrict(P, point, direction)
    k = P.k
    scale = max(1.0, float(np.abs(coef).max()))
    roots, coincident = [], []
    for i in range(k):
        for l in range(i + 1, k):
            da, db, dc = coef[i] - coef[l]
            if max(abs(da), abs(db), abs(dc)) <= COINCIDE_TOL * scale:
                coincident.append((i, l))
                continue
            roots += _quad_roots(da, db, dc, scale)
    bp = np.unique(np.array([r for r in roots if np.isfinite(r)], dtype=np.float64))

    def winners(t):
        g = coef[:, 0] * t * t + coef[:, 1] * t + coef[:, 2]
        h = g.min()
        return frozenset(np.flatnonzero(g - h <= ENVELOPE_TOL * (1.0 + abs(h))).tolist())

    # alternate open pieces and breakpoints: (-inf, b0), {b0}, (b0, b1), ...
    elems = []
    if bp.size == 0:
        elems.append((-math.inf, math.inf, winners(0.0)))
    else:
        pad = max(1.0, float(np.abs(bp).max()))
        elems.append((-math.inf, bp[0], winners(bp[0] - pad)))
        for m in range(bp.size):
            elems.append((bp[m], bp[m], winners(bp[m])))
            hi = bp[m + 1] if m + 1 < bp.size else math.inf
            mid = (bp[m] + hi) / 2 if m + 1 < bp.size else bp[m] + pad
            elems.append((bp[m], hi, winners(mid)))
    pieces = [e for e in elems if e[0] != e[1] or e[0] in (-math.inf, math.inf)]

    intervals = []
    for i in range(k):
        start = None
        for lo, hi, win in elems:
            if i in win:
                if start is None:
                    start = lo
                end = hi
            elif start is not None:
                intervals.append((start, end, i))
                start = None
        if start is not None:
            intervals.append((start, end, i))
    intervals.sort(key=lambda r: (r[0], r[1], r[2]))
    if strict and not coincident and len(intervals) > 2 * k - 1:
        raise WCAError(f"line meets {len(intervals)} cell components, more than 2k-1={2 * k - 1}")
    return Dissection(bp, pieces, intervals, coincident)


def nested_parabolas(k: int, offset: float = 1e-3) -> AnisotropicDiagram:
    """One-dimensional diagram whose envelope on the line has ``2k-1`` pieces.

    ``g_i(t) = 4^i (t - i*offset)^2 - 3i``: steeper parabolas sit lower at the
    origin and are overtaken in turn by flatter ones on both sides.
    """
    sites = (offset * np.arange(k)).reshape(k, 1)
    mats = (4.0 ** np.arange(k)).reshape(k, 1, 1)
    return AnisotropicDiagram(sites, -3.0 * np.arange(k), NormFamily(mats))


# --------------------------------------------------------------------------
# sensitivity

@dataclass
class SensitivityReport:
    per_point: np.ndarray
    total: float
    trials: int
    zero_cost_trials: int
    seed: int

    def to_dict(self) -> dict:
        return {"per_point_lower_bound": self.per_point.tolist(), "total_lower_bound": self.total,
                "trials": self.trials, "zero_cost_trials": self.zero_cost_trials,
                "seed": self.seed, "kind": "lower bound from sampled site sets"}


def far_probes(X: WeightedDataSet, k: int, j: int, rng, radii=PROBE_RADII) -> list[SiteSet]:
    """Site sets that isolate point ``j``: one site at the data mean, one far
    beyond ``x_j`` along the ray from the mean, the rest random."""
    mean = X.centroid()
    R = float(np.sqrt(((X.points - mean) ** 2).sum(1)).max())
    u = X.points[j] - mean
    nu = float(np.linalg.norm(u))
    if nu == 0:
        u = rng.normal(size=X.d)
        nu = float(np.linalg.norm(u))
    u = u / nu
    out = []
    for rad in radii:
        S = sample_sites(X, k, rng).sites.copy()
        S[0] = mean
        if k > 1:
            S[1] = mean + rad * max(R, 1e-300) * u
        out.append(SiteSet(S))
    return out


def sensitivity_estimate(X: WeightedDataSet, k: int, K: WeightBounds, trials: int = 100,
                         seed: int = 0, A: NormFamily | None = None,
                         probes: list | None = None, far: bool = True) -> SensitivityReport:
    """Lower bound on each point's sensitivity from sampled site sets.

    Sampled sets are ``trials`` box samples, per-point far-site probes and any
    extra ``probes``. Site sets with zero optimal cost are skipped and counted.
    """
    A = NormFamily.identity(k, X.d) if A is None else A
    inst = Instance.create(X, k, A, K)
    rng = np.random.default_rng(seed)
    sets = [sample_sites(X, k, rng) for _ in range(trials)]
    if far:
        for j in range(X.n):
            sets += far_probes(X, k, j, rng)
    sets += list(probes or [])

    def share(S):
        C, total, D = _lp(X, S, inst)
        if total <= 0:
            return None
        return (C.xi * D).sum(axis=0) * X.weights / total

    best = np.zeros(X.n)
    zero = 0
    for s in _ordered_map(share, sets):
        if s is None:
            zero += 1
        else:
            best = np.maximum(best, s)
    best = np.minimum(best, 1.0)
    return SensitivityReport(best, float(best.sum()), len(sets), zero, seed)


@dataclass
class SensitivityExample:
    n: int
    r: float
    X: WeightedDataSet
    K: WeightBounds
    probes: list
    optimal_cost: float
    per_point_bound: float
    lp_costs: np.ndarray
    probe_clusterings: list

    @property
    def total_bound(self) -> float:
        return self.n * self.per_point_bound


def sensitivity_example(n: int, r: float) -> SensitivityExample:
    """Points on a small circle with one cluster forced to hold a single point.

    With weight bounds ``(n-1, 1)`` and sites ``{0, x_j/r}`` the optimum sends
    ``x_j`` alone to the far site, so ``x_j`` carries a share
    ``(1-r)^2 / ((n-1) r^2 + (1-r)^2)`` of the cost.
    """
    if n < 2:
        raise WCAError("need at least two points")
    if not 0 < r < 0.5:
        raise WCAError("radius must lie in (0, 1/2)")
    ang = 2 * np.pi * np.arange(n) / n
    X = WeightedDataSet.unit(r * np.column_stack([np.cos(ang), np.sin(ang)]))
    K = WeightBounds(np.array([n - 1.0, 1.0]), np.array([n - 1.0, 1.0]))
    A = NormFamily.identity(2, 2)
    inst = Instance(X, 2, A, K)
    opt = (n - 1) * r * r + (1 - r) ** 2
    probes, costs, cls = [], [], []
    for j in range(n):
        S = SiteSet(np.vstack([np.zeros(2), X.points[j] / r]))
        C, c, _ = _lp(X, S, inst)
        if abs(c - opt) > 1e-9 * opt:
            raise WCAError(f"LP cost {c!r} differs from {opt!r} for probe {j}")
        probes.append(S)
        costs.append(c)
        cls.append(C)
    return SensitivityExample(n, r, X, K, probes, opt, (1 - r) ** 2 / opt,
                              np.array(costs), cls)
