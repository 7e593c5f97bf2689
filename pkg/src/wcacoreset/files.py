"""File formats used by the command line: points, sites, configs, clusterings, SVG."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .assign import AnisotropicDiagram
from .core import Clustering, NormFamily, SiteSet, WCAError, WeightBounds, WeightedDataSet

FRACTION_CUTOFF = 1e-9


class ParseError(WCAError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def _num(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        return float.fromhex(text)


def _read_table(path):
    """Header and float rows of a CSV file, with parse errors naming the line."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1)
                if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ParseError(path, 1, "file is empty, a header row is required")
    line, header = rows[0]
    header = [h.strip() for h in header]
    try:
        [_num(h) for h in header]
    except ValueError:
        pass
    else:
        raise ParseError(path, line, "missing header row")
    out = []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(path, line, f"expected {len(header)} fields, found {len(row)}")
        try:
            vals = [_num(v) for v in row]
        except ValueError:
            raise ParseError(path, line, f"non-numeric field in row {row!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(path, line, "non-finite value")
        out.append(vals)
    if not out:
        raise ParseError(path, line, "no data rows")
    return header, np.array(out, dtype=np.float64)


def read_points(path) -> WeightedDataSet:
    """Points CSV: coordinate columns plus an optional ``weight`` column."""
    header, M = _read_table(path)
    if "weight" in header:
        wi = header.index("weight")
        w = M[:, wi]
        P = np.delete(M, wi, axis=1)
        bad = np.flatnonzero(w <= 0)
        if bad.size:
            raise ParseError(path, int(bad[0]) + 2, "weights must be positive")
    else:
        P, w = M, np.ones(M.shape[0])
    if P.shape[1] == 0:
        raise ParseError(path, 1, "no coordinate columns")
    return WeightedDataSet(P, w)


def write_points(path, X: WeightedDataSet) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"x{c}" for c in range(X.d)] + ["weight"])
        for p, w in zip(X.points, X.weights):
            wr.writerow([repr(float(v)) for v in p] + [repr(float(w))])


def read_sites(path) -> SiteSet:
    _, M = _read_table(path)
    return SiteSet(M)


def write_sites(path, S: SiteSet) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"x{c}" for c in range(S.d)])
        for s in S.sites:
            wr.writerow([repr(float(v)) for v in s])


def _bound(v, path, what):
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        raise WCAError(f"{path}: bad {what} value {v!r}")
    return float(v)


def read_config(path, k: int | None = None, d: int | None = None, total: float | None = None):
    """Parse a JSON config into ``(k, WeightBounds, NormFamily)``.

    Keys: ``k``; ``kappa`` as ``[[lo, hi], ...]`` with ``"inf"`` allowed, or
    ``"balanced"`` together with ``slack``; ``A`` as ``"identity"`` or a list
    of matrices. A ``k`` given on the command line wins over the file.
    """
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ParseError(path, e.lineno, e.msg) from None
    k = k if k is not None else doc.get("k")
    if k is None:
        raise WCAError("the number of clusters k is required (--k or config key 'k')")
    k = int(k)
    kappa = doc.get("kappa")
    if kappa is None or kappa == "unconstrained":
        K = WeightBounds.unconstrained(k)
    elif kappa == "balanced":
        if total is None:
            raise WCAError("balanced bounds need the total weight")
        K = WeightBounds.balanced(total, k, float(doc.get("slack", 0.0)))
    else:
        if len(kappa) != k:
            raise WCAError(f"{path}: kappa has {len(kappa)} entries for k={k}")
        lo = [_bound(p[0], path, "kappa") for p in kappa]
        hi = [_bound(p[1], path, "kappa") for p in kappa]
        K = WeightBounds(np.array(lo), np.array(hi))
    A = doc.get("A", "identity")
    if A == "identity":
        if d is None:
            raise WCAError("identity norms need the data dimension")
        N = NormFamily.identity(k, d)
    else:
        N = NormFamily(np.array(A, dtype=np.float64))
        if N.k != k or (d is not None and N.d != d):
            raise WCAError(f"{path}: A has shape {N.matrices.shape}, expected ({k}, {d}, {d})")
    return k, K, N


def write_clustering(path, C: Clustering) -> None:
    """Sparse ``cluster,point,fraction`` triplets; fractions below 1e-9 are dropped."""
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# k={C.k} n={C.n}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["cluster", "point", "fraction"])
        for j in range(C.n):
            for i in range(C.k):
                f = float(C.xi[i, j])
                if f >= FRACTION_CUTOFF:
                    wr.writerow([i, j, f.hex()])


def read_clustering(path, k: int | None = None, n: int | None = None) -> Clustering:
    path = Path(path)
    text = path.read_text()
    first = text.split("\n", 1)[0]
    if first.startswith("#"):
        for tok in first[1:].split():
            key, _, val = tok.partition("=")
            if key == "k" and k is None:
                k = int(val)
            if key == "n" and n is None:
                n = int(val)
    _, M = _read_table(path)
    ii, jj = M[:, 0].astype(np.int64), M[:, 1].astype(np.int64)
    k = int(ii.max()) + 1 if k is None else k
    n = int(jj.max()) + 1 if n is None else n
    if ii.min() < 0 or jj.min() < 0 or ii.max() >= k or jj.max() >= n:
        raise ParseError(path, 2, "cluster or point index out of range")
    xi = np.zeros((k, n))
    np.add.at(xi, (ii, jj), M[:, 2])
    sums = xi.sum(axis=0)
    if np.any(sums <= 0):
        raise ParseError(path, 2, f"point {int(np.argmin(sums))} has no cluster")
    # only columns that lost dropped fractions are renormalized; others stay bit-exact
    off = np.abs(sums - 1.0) > 1e-12
    xi[:, off] /= sums[off]
    return Clustering(xi)


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_plain) + "\n")


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def read_diagram(path) -> AnisotropicDiagram:
    doc = json.loads(Path(path).read_text())
    return AnisotropicDiagram(np.array(doc["sites"]), np.array(doc["sizes"]),
                              NormFamily(np.array(doc["A"])))


# --------------------------------------------------------------------------
# SVG

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
SIZE = 600
MARGIN = 30


def _f(v: float) -> str:
    return f"{v:.2f}"


def render_svg(X: WeightedDataSet, C: Clustering | None = None, sites: SiteSet | None = None,
               diagram: AnisotropicDiagram | None = None, grid: int = 160) -> str:
    """Deterministic 2D plot of points, clusters, sites and diagram boundaries."""
    if X.d != 2:
        raise WCAError(f"plots need d=2 data, got d={X.d}; project the points to two coordinates first")
    pts = [X.points]
    if sites is not None:
        pts.append(sites.sites)
    allp = np.vstack(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = float(max((hi - lo).max(), 1e-12))
    lo = lo - 0.05 * span
    span *= 1.1
    inner = SIZE - 2 * MARGIN

    def tx(p):
        p = np.atleast_2d(p)
        x = MARGIN + (p[:, 0] - lo[0]) / span * inner
        y = SIZE - MARGIN - (p[:, 1] - lo[1]) / span * inner
        return x, y

    out = io.StringIO()
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
              f'viewBox="0 0 {SIZE} {SIZE}">\n')
    out.write(f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>\n')

    if diagram is not None:
        xs = lo[0] + (np.arange(grid) + 0.5) / grid * span
        ys = lo[1] + (np.arange(grid) + 0.5) / grid * span
        GX, GY = np.meshgrid(xs, ys)
        lab = np.argmin(diagram.g(np.column_stack([GX.ravel(), GY.ravel()])), axis=0)
        lab = lab.reshape(grid, grid)
        cell = span / grid
        segs = []
        for r, c in zip(*np.nonzero(lab[:, 1:] != lab[:, :-1])):
            x = lo[0] + (c + 1) * cell
            y0, y1 = lo[1] + r * cell, lo[1] + (r + 1) * cell
            segs.append(((x, y0), (x, y1)))
        for r, c in zip(*np.nonzero(lab[1:, :] != lab[:-1, :])):
            y = lo[1] + (r + 1) * cell
            x0, x1 = lo[0] + c * cell, lo[0] + (c + 1) * cell
            segs.append(((x0, y), (x1, y)))
        d = []
        for a, b in segs:
            (ax,), (ay,) = tx(np.array(a))
            (bx,), (by,) = tx(np.array(b))
            d.append(f"M{_f(ax)} {_f(ay)}L{_f(bx)} {_f(by)}")
        out.write(f'<path d="{"".join(d)}" stroke="#444" stroke-width="1" fill="none"/>\n')

    px, py = tx(X.points)
    r = 4.0
    for j in range(X.n):
        cx, cy = _f(px[j]), _f(py[j])
        if C is None:
            out.write(f'<circle cx="{cx}" cy="{cy}" r="{r}" fill="black"/>\n')
            continue
        col = C.xi[:, j]
        live = np.flatnonzero(col >= FRACTION_CUTOFF)
        if live.size == 1:
            out.write(f'<circle cx="{cx}" cy="{cy}" r="{r}" '
                      f'fill="{PALETTE[live[0] % len(PALETTE)]}"/>\n')
            continue
        # pie marker for a fractionally assigned point
        start = 0.0
        for i in live:
            end = start + 2 * math.pi * col[i]
            x0, y0 = px[j] + r * math.cos(start), py[j] - r * math.sin(start)
            x1, y1 = px[j] + r * math.cos(end), py[j] - r * math.sin(end)
            big = 1 if end - start > math.pi else 0
            out.write(f'<path d="M{cx} {cy}L{_f(x0)} {_f(y0)}A{r} {r} 0 {big} 0 {_f(x1)} {_f(y1)}Z" '
                      f'fill="{PALETTE[i % len(PALETTE)]}"/>\n')
            start = end
    if sites is not None:
        sx, sy = tx(sites.sites)
        for i in range(sites.k):
            out.write(f'<rect x="{_f(sx[i] - 5)}" y="{_f(sy[i] - 5)}" width="10" height="10" '
                      f'fill="{PALETTE[i % len(PALETTE)]}" stroke="black"/>\n')
    out.write("</svg>\n")
    return out.getvalue()
