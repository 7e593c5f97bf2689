"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import time

import numpy as np
import pytest

from conftest import (
    gaussian_mixture,
    integral_assignment_oracle,
    random_integer_bounds,
    random_norms,
    random_real_bounds,
    random_spd,
)
from wcacoreset.approx import alternate_sites, opt_bruteforce
from wcacoreset.assign import Compatibility, DegeneracyError, MergingFunction, extract_diagram, solve_assignment
from wcacoreset.cli import run_cluster
from wcacoreset.core import NormFamily, SiteSet, WeightBounds, WeightedDataSet, distance_matrix, variation
from wcacoreset.coreset import build_coreset, movement_coreset, movement_coreset_certify
from wcacoreset.verify import (
    Instance,
    check_coreset_properties,
    dissect_line,
    nested_parabolas,
    sensitivity_estimate,
    sensitivity_example,
)

SWEEP_K = (2, 3, 5)
SWEEP_EPS = (0.5, 0.25, 0.125)


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def sweep():
    runs = []
    for k in SWEEP_K:
        X = gaussian_mixture(2000, k, seed=100 + k)
        for eps in SWEEP_EPS:
            t0 = time.perf_counter()
            cs = build_coreset(X, k, eps)
            runs.append({"k": k, "eps": eps, "X": X, "coreset": cs,
                         "seconds": time.perf_counter() - t0})
    return runs


def test_criterion_1_size_bound(sweep, capsys):
    bad, slopes = [], {}
    for r in sweep:
        p = r["coreset"].provenance
        bound = 2 * p["alg"] / p["threshold"] + r["k"] * p["n_lines"]
        if not (r["coreset"].size <= bound and r["seconds"] <= 60):
            bad.append((r["k"], r["eps"], r["coreset"].size, bound, r["seconds"]))
    for k in SWEEP_K:
        rs = [r for r in sweep if r["k"] == k]
        x = np.log([1 / r["eps"] for r in rs])
        y = np.log([r["coreset"].size for r in rs])
        slopes[k] = float(np.polyfit(x, y, 1)[0])
    ok = not bad and max(slopes.values()) <= 2 + 1 + 0.3
    sizes = {(r["k"], r["eps"]): r["coreset"].size for r in sweep}
    slowest = max(r["seconds"] for r in sweep)
    verdict(capsys, 1, "size bound", ok,
            f"violations={bad} exponents={ {k: round(s, 3) for k, s in slopes.items()} } "
            f"sizes={sizes} slowest={slowest:.2f}s")


def test_criterion_2_coreset_inequalities(sweep, capsys):
    failures, worst = [], {"a": 0.0, "b": 0.0}
    for r in sweep:
        X, k, cs = r["X"], r["k"], r["coreset"]
        for K in (WeightBounds.unconstrained(k), WeightBounds.balanced(X.total_weight, k, 0.1)):
            rep = check_coreset_properties(Instance.create(X, k, K=K), cs, trials=100,
                                           seed=7, n_random=3)
            for key in worst:
                worst[key] = max(worst[key], rep.worst[key])
            if rep.violations:
                failures.append((k, r["eps"], "inf" if np.isinf(K.upper[0]) else "balanced",
                                 len(rep.violations)))
    verdict(capsys, 2, "coreset inequalities", not failures,
            f"runs={len(sweep)}x2 bounds, 100 trials, 4 clusterings each; "
            f"violations={failures} worst ratios a={worst['a']:.6f} b={worst['b']:.6f}")


def _merger(rng, X, twins):
    """Random merging of the points; with ``twins`` only near-duplicate pairs merge."""
    n = X.n
    if twins:
        groups = []
        for a in range(0, n, 2):
            groups += [[a, a + 1]] if rng.random() < 0.7 else [[a], [a + 1]]
    else:
        m = int(rng.integers(2, n))
        labels = np.concatenate([np.arange(m), rng.integers(0, m, n - m)])
        rng.shuffle(labels)
        groups = [list(np.flatnonzero(labels == g)) for g in range(m)]
    mapping = np.empty(n, dtype=np.int64)
    for g, members in enumerate(groups):
        mapping[members] = g
    p = MergingFunction(mapping, len(groups))
    wt = p.merged_weights(X.weights)
    pts = np.array([X.weights[g] @ X.points[g] / X.weights[g].sum() for g in groups])
    return p, WeightedDataSet(pts, wt)


def test_criterion_3_movement_coreset(capsys):
    rng = np.random.default_rng(3)
    eps = 0.5
    stats = {"certified": 0, "certified_violated": 0, "uncertified": 0,
             "uncertified_violated": 0, "uncertified_inconclusive": 0}
    for inst in range(50):
        n = 2 * int(rng.integers(3, 7))
        base = rng.normal(size=(n // 2, 2)) * 3
        X = WeightedDataSet(np.repeat(base, 2, axis=0) + 1e-3 * rng.normal(size=(n, 2)),
                            rng.uniform(0.5, 2.0, n))
        lb = opt_bruteforce(X, 2)
        A = NormFamily.identity(2, 2)
        for twins in (True, False):
            p, Xt = _merger(rng, X, twins)
            cert = movement_coreset_certify(X, Xt, p, eps, A, lb)
            cs = movement_coreset(X, Xt, p, eps)
            violated = False
            for K in (WeightBounds.unconstrained(2), WeightBounds.balanced(X.total_weight, 2, 0.1)):
                rep = check_coreset_properties(Instance.create(X, 2, A, K), cs, trials=100,
                                               seed=inst)
                violated |= bool(rep.violations)
            if cert:
                stats["certified"] += 1
                stats["certified_violated"] += violated
            else:
                stats["uncertified"] += 1
                key = "uncertified_violated" if violated else "uncertified_inconclusive"
                stats[key] += 1
    ok = stats["certified_violated"] == 0 and stats["uncertified"] >= 10 and stats["certified"] > 0
    verdict(capsys, 3, "movement coreset", ok, str(stats))


def test_criterion_4_lp_correctness(capsys):
    rng = np.random.default_rng(4)
    worst_val, worst_gap = 0.0, 0.0
    for _ in range(200):
        n, k = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        X = WeightedDataSet.unit(rng.normal(size=(n, 2)) * 2)
        S = SiteSet(rng.normal(size=(k, 2)) * 2)
        K = WeightBounds(*random_integer_bounds(rng, n, k))
        A = random_norms(rng, k, 2) if rng.random() < 0.5 else NormFamily.identity(k, 2)
        _, cert = solve_assignment(X, S, A, K)
        want = integral_assignment_oracle(distance_matrix(X, S, A), K)
        scale = max(abs(want), 1e-300)
        worst_val = max(worst_val, abs(cert.primal_cost - want) / scale)
        worst_gap = max(worst_gap, abs(cert.gap) / max(abs(cert.primal_cost), 1e-300))
    ok = worst_val <= 1e-9 and worst_gap <= 1e-8
    verdict(capsys, 4, "LP correctness", ok,
            f"200 instances, worst value error {worst_val:.2e}, worst duality gap {worst_gap:.2e}")


def _strict_instance(rng, k, n=30):
    X = WeightedDataSet(rng.normal(size=(n, 2)), rng.uniform(0.5, 2.0, n))
    K = WeightBounds(*random_real_bounds(rng, X.total_weight, k))
    return X, SiteSet(rng.normal(size=(k, 2))), random_norms(rng, k, 2), K


def test_criterion_5_strict_compatibility(capsys):
    rng = np.random.default_rng(5)
    first, within, failed = 0, 0, []
    for t in range(100):
        X, S, A, K = _strict_instance(rng, 3)
        try:
            res = extract_diagram(X, S, A, K, seed=t, max_attempts=5)
        except DegeneracyError as e:
            failed.append((t, e.cell_pair))
            continue
        within += res.compatibility == Compatibility.STRICT
        first += res.attempts == 1
    ok = first >= 95 and within == 100
    verdict(capsys, 5, "strict compatibility", ok,
            f"strict without perturbation {first}/100, within 5 retries {within}/100, failures={failed}")


def test_criterion_6_interval_structure(capsys):
    rng = np.random.default_rng(6)
    worst, over = {}, []
    for t in range(200):
        k = int(rng.integers(2, 5))
        X, S, A, K = _strict_instance(rng, k)
        res = extract_diagram(X, S, A, K, seed=t)
        assert res.compatibility == Compatibility.STRICT
        point = X.points[rng.integers(X.n)] + 0.1 * rng.normal(size=2)
        d = dissect_line(res.diagram, point, rng.normal(size=2))
        worst[k] = max(worst.get(k, 0), d.count)
        if d.count > 2 * k - 1:
            over.append((t, k, d.count))
    tight = {k: dissect_line(nested_parabolas(k), [0.0], [1.0]).count for k in (2, 3, 4)}
    ok = not over and all(tight[k] == 2 * k - 1 for k in tight)
    verdict(capsys, 6, "interval structure", ok,
            f"max components by k {dict(sorted(worst.items()))}, exceedances={over}, "
            f"nested construction {tight}")


def test_criterion_7_sensitivity(capsys):
    ex = sensitivity_example(10, 0.01)
    want = 9 * 0.01 ** 2 + 0.99 ** 2
    cost_err = float(np.max(np.abs(ex.lp_costs - want)) / want)
    est = sensitivity_estimate(ex.X, 2, ex.K, trials=20, seed=0, probes=ex.probes)
    small = sensitivity_example(10, 1e-4)
    est_small = sensitivity_estimate(small.X, 2, small.K, trials=20, seed=0, probes=small.probes)
    ok = (cost_err <= 1e-9 and ex.per_point_bound >= 0.9990 and est.total >= 9.99
          and np.all(est.per_point >= ex.per_point_bound * (1 - 1e-12))
          and est_small.total >= 10 * (1 - 1e-6))
    verdict(capsys, 7, "sensitivity", ok,
            f"cost error {cost_err:.1e}, per-point bound {ex.per_point_bound:.6f}, "
            f"T(r=0.01)={est.total:.6f}, T(r=1e-4)={est_small.total:.9f}")


def test_criterion_8_identities(capsys):
    rng = np.random.default_rng(8)
    worst_cr, worst_ne = 0.0, 0.0
    for _ in range(10_000):
        n, d = int(rng.integers(1, 10)), int(rng.integers(1, 5))
        X = WeightedDataSet(rng.normal(size=(n, d)) * rng.uniform(0.1, 10), rng.uniform(0.1, 5, n))
        M = random_spd(rng, d, 0.05, 20.0)
        s = rng.normal(size=d) * 5
        diff = X.points - s
        lhs = float(X.weights @ np.einsum("nd,de,ne->n", diff, M, diff))
        c = X.centroid()
        rhs = X.total_weight * float((c - s) @ M @ (c - s)) + variation(X, M)
        worst_cr = max(worst_cr, abs(lhs - rhs) / max(abs(lhs), 1e-300))
        ev = np.linalg.eigvalsh(M)
        ve, va = variation(X), variation(X, M)
        slack = max(ev[0] * ve - va, va - ev[-1] * ve, 0.0)
        worst_ne = max(worst_ne, slack / max(va, 1e-300))
    ok = worst_cr <= 1e-9 and worst_ne <= 1e-9
    verdict(capsys, 8, "identities", ok,
            f"10^4 cases each; center replacement rel error {worst_cr:.1e}, "
            f"norm equivalence rel excess {worst_ne:.1e}")


def test_criterion_9_end_to_end(capsys):
    eps, k = 0.3, 3
    quality, t_core, t_direct, sizes = [], 0.0, 0.0, []
    for s in range(20):
        X = gaussian_mixture(5000, k, seed=900 + s)
        A = NormFamily.identity(k, 2)
        Ku = WeightBounds.unconstrained(k)
        _, _, direct = alternate_sites(X, k, A, Ku, starts=5, seed=s)
        res = run_cluster(X, k, eps, Ku, A, seed=s)
        quality.append(res.refined_cost / ((1 + eps) * direct * 1.05))
        sizes.append(res.coreset.size)
        Kb = WeightBounds.balanced(X.total_weight, k, 0.1)
        t0 = time.perf_counter()
        alternate_sites(X, k, A, Kb, starts=5, seed=s)
        t1 = time.perf_counter()
        run_cluster(X, k, eps, Kb, A, seed=s)
        t2 = time.perf_counter()
        t_direct += t1 - t0
        t_core += t2 - t1
    share = t_core / t_direct
    ok_quality = max(quality) <= 1.0
    ok_time = share <= 0.25
    verdict(capsys, 9, "end to end", ok_quality and ok_time,
            f"worst cost / ((1+eps) best direct * 1.05) = {max(quality):.4f} "
            f"({'ok' if ok_quality else 'exceeded'}); coreset pipeline time share "
            f"{share:.2%} of direct ({'ok' if ok_time else 'above 25%'}); "
            f"coreset sizes {min(sizes)}..{max(sizes)} of n=5000")
