"""Command line entry point ``wca``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import files
from .approx import alternate_sites
from .assign import extract_diagram, solve_assignment
from .core import (
    Clustering,
    NormFamily,
    SiteSet,
    WCAError,
    WeightBounds,
    WeightedDataSet,
    centroids,
    cost,
    opt_site_cost,
)
from .coreset import Coreset, CoresetConfig, build_coreset, build_epsilon_net, net_constant
from .verify import (
    Instance,
    check_centroid_form,
    check_coreset_properties,
    sensitivity_estimate,
    sensitivity_example,
)

log = logging.getLogger("wcacoreset")


@dataclass
class ClusterResult:
    clustering: Clustering
    sites: np.ndarray
    coreset: Coreset
    coreset_cost: float
    full_cost: float
    refined_cost: float | None
    seconds: dict


def run_cluster(X: WeightedDataSet, k: int, eps: float, K: WeightBounds | None = None,
                A: NormFamily | None = None, seed: int = 0, repeats: int = 5,
                starts: int = 5, refine: bool = True,
                config: CoresetConfig | None = None) -> ClusterResult:
    """Coreset pipeline: build at ``eps/3``, cluster the coreset, extend.

    With ``refine`` the sites are moved once to the centroids of the extended
    clustering; the assignment itself is not re-solved.
    """
    A = NormFamily.identity(k, X.d) if A is None else A
    K = WeightBounds.unconstrained(k) if K is None else K
    K.check_feasible(X.total_weight)
    config = config or CoresetConfig(repeats=repeats, seed=seed)
    t0 = time.perf_counter()
    cs = build_coreset(X, k, eps / 3.0, A, config)
    t1 = time.perf_counter()
    Ct, S, ccost = alternate_sites(cs.data, k, A, K, starts=starts, seed=seed)
    t2 = time.perf_counter()
    C = cs.extend(Ct)
    full = cost(X, C, S, A)
    refined = opt_site_cost(X, C, A) if refine else None
    sites = centroids(X, C)[0] if refine else S.sites
    t3 = time.perf_counter()
    return ClusterResult(C, sites, cs, ccost, full, refined,
                         {"coreset": t1 - t0, "cluster": t2 - t1, "extend": t3 - t2,
                          "total": t3 - t0})


# --------------------------------------------------------------------------
# commands

def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, k=None):
    X = files.read_points(args.points)
    k, K, A = files.read_config(getattr(args, "config", None), k=k, d=X.d, total=X.total_weight)
    K.check_feasible(X.total_weight)
    return X, k, K, A


def _emit(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True, default=files._plain))


def cmd_assign(args) -> int:
    S = files.read_sites(args.sites)
    X, k, K, A = _load(args, k=args.k if args.k is not None else S.k)
    C, cert = solve_assignment(X, S, A, K)
    out = _out_dir(args)
    files.write_clustering(out / "clustering.csv", C)
    (out / "certificate.json").write_text(cert.to_json(indent=2) + "\n")
    summary = {"cost": cert.primal_cost, "dual_objective": cert.dual_objective,
               "cluster_weights": C.cluster_weights(X.weights)}
    if args.diagram:
        res = extract_diagram(X, S, A, K, seed=args.seed)
        files.write_json(out / "diagram.json", {**res.diagram.to_dict(),
                                                "compatibility": res.compatibility.name.lower(),
                                                "attempts": res.attempts})
        summary["compatibility"] = res.compatibility.name.lower()
    _emit(summary)
    return 0


def _config(args) -> CoresetConfig:
    return CoresetConfig(beta=args.beta, repeats=args.repeats, seed=args.seed, alpha=args.alpha)


def cmd_build_coreset(args) -> int:
    X, k, K, A = _load(args, k=args.k)
    cs = build_coreset(X, k, args.eps, A, _config(args))
    out = Path(args.out or "coreset.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(cs.to_json() + "\n")
    p = cs.provenance
    _emit({"n": X.n, "size": cs.size, "size_bound": p.get("size_bound"),
           "run_bound": p.get("run_bound"), "lines": p.get("n_lines"),
           "delta_plus": cs.delta_plus, "delta_minus": cs.delta_minus, "delta": cs.delta,
           "eps": cs.eps, "output": str(out)})
    return 0


def cmd_cluster(args) -> int:
    X, k, K, A = _load(args, k=args.k)
    res = run_cluster(X, k, args.eps, K, A, seed=args.seed, repeats=args.repeats,
                      refine=not args.no_refine, config=_config(args))
    out = _out_dir(args)
    files.write_clustering(out / "clustering.csv", res.clustering)
    files.write_sites(out / "sites.csv", SiteSet(res.sites))
    _emit({"coreset_size": res.coreset.size, "coreset_cost": res.coreset_cost,
           "full_cost": res.full_cost, "refined_cost": res.refined_cost,
           "cluster_weights": res.clustering.cluster_weights(X.weights),
           "seconds": res.seconds})
    return 0


def cmd_verify(args) -> int:
    X, k, K, A = _load(args, k=args.k)
    cs = Coreset.from_json(Path(args.coreset).read_text())
    inst = Instance.create(X, k, A, K)
    reports = [check_coreset_properties(inst, cs, trials=args.trials, seed=args.seed)]
    if args.centroid:
        reports.append(check_centroid_form(inst, cs, trials=args.trials, seed=args.seed))
    out = _out_dir(args)
    files.write_json(out / "report.json", [r.to_dict() for r in reports])
    (out / "report.md").write_text("\n".join(r.to_markdown() for r in reports))
    _emit({r.check: r.status for r in reports})
    return 0 if all(r.passed for r in reports) else 3


def cmd_sensitivity_demo(args) -> int:
    ex = sensitivity_example(args.n, args.r)
    est = sensitivity_estimate(ex.X, 2, ex.K, trials=args.trials, seed=args.seed, probes=ex.probes)
    if args.emit:
        out = Path(args.emit)
        out.mkdir(parents=True, exist_ok=True)
        files.write_points(out / "points.csv", ex.X)
        kappa = [[float(a), float(b)] for a, b in zip(ex.K.lower, ex.K.upper)]
        files.write_json(out / "config.json", {"k": 2, "kappa": kappa, "A": "identity"})
        for j, S in enumerate(ex.probes):
            files.write_sites(out / f"sites_{j:03d}.csv", S)
    _emit({"n": ex.n, "r": ex.r, "optimal_cost": ex.optimal_cost,
           "per_point_bound": ex.per_point_bound, "total_bound": ex.total_bound,
           "estimated_total": est.total, "estimated_min_point": float(est.per_point.min()),
           "site_sets": est.trials, "zero_cost_site_sets": est.zero_cost_trials})
    return 0


def cmd_net(args) -> int:
    net = build_epsilon_net(args.eps0, args.d)
    if args.out:
        with Path(args.out).open("w") as fh:
            fh.write(",".join(f"q{c}" for c in range(args.d)) + "\n")
            for q in net.directions:
                fh.write(",".join(repr(float(v)) for v in q) + "\n")
    _emit({"size": len(net), "bound": net_constant(args.d) * args.eps0 ** -(args.d - 1)})
    return 0


def cmd_plot(args) -> int:
    X = files.read_points(args.points)
    C = files.read_clustering(args.clustering, n=X.n) if args.clustering else None
    S = files.read_sites(args.sites) if args.sites else None
    P = files.read_diagram(args.diagram) if args.diagram else None
    svg = files.render_svg(X, C, S, P)
    out = Path(args.out or "plot.svg")
    out.write_text(svg)
    _emit({"output": str(out)})
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wca", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, k=True, eps=False):
        p.add_argument("points", help="points CSV with header and optional weight column")
        p.add_argument("--config", help="JSON with k, kappa and A")
        if k:
            p.add_argument("--k", type=int)
        if eps:
            p.add_argument("--eps", type=float, required=True)
            p.add_argument("--beta", type=int, default=1)
            p.add_argument("--alpha", type=float, default=16.0)
            p.add_argument("--repeats", type=int, default=5)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out")

    p = sub.add_parser("assign", help="optimal constrained assignment to fixed sites")
    common(p)
    p.add_argument("sites", help="sites CSV with header")
    p.add_argument("--diagram", action="store_true", help="also write a compatible diagram")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("build-coreset", help="build a coreset and write it as JSON")
    common(p, eps=True)
    p.set_defaults(func=cmd_build_coreset)

    p = sub.add_parser("cluster", help="cluster through a coreset and extend to the data")
    common(p, eps=True)
    p.add_argument("--no-refine", action="store_true")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("verify", help="check coreset inequalities on random sites")
    common(p)
    p.add_argument("coreset", help="coreset JSON")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--centroid", action="store_true", help="also check centroid form")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sensitivity-demo", help="points on a small circle with a singleton cluster")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--r", type=float, default=0.01)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit", help="directory for instance files")
    p.set_defaults(func=cmd_sensitivity_demo)

    p = sub.add_parser("net", help="direction net on the unit sphere")
    p.add_argument("--eps0", type=float, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_net)

    p = sub.add_parser("plot", help="SVG plot of 2D points")
    p.add_argument("points")
    p.add_argument("--clustering")
    p.add_argument("--sites")
    p.add_argument("--diagram", help="diagram JSON written by assign --diagram")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (WCAError, OSError) as e:
        doc = {"error": type(e).__name__, "message": str(e), "command": args.command}
        if isinstance(e, files.ParseError):
            doc.update(file=e.path, line=e.line)
        print(json.dumps(doc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
