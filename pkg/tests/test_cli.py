import json

import numpy as np
import pytest

from conftest import gaussian_mixture
from wcacoreset import files
from wcacoreset.cli import main
from wcacoreset.core import Clustering, SiteSet, WCAError, WeightedDataSet


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, (json.loads(out) if rc == 0 and out.strip() else None), err


@pytest.fixture
def mixture_csv(tmp_path):
    path = tmp_path / "points.csv"
    files.write_points(path, gaussian_mixture(300, 3, seed=1))
    return path


def test_assign_single_point(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("x,y\n1.0,2.0\n")
    (tmp_path / "s.csv").write_text("x,y\n0,0\n")
    rc, doc, _ = run(capsys, "assign", tmp_path / "p.csv", tmp_path / "s.csv", "--out", tmp_path / "o")
    assert rc == 0 and doc["cost"] == pytest.approx(5.0)
    C = files.read_clustering(tmp_path / "o" / "clustering.csv")
    assert C.xi.tolist() == [[1.0]]


def test_sensitivity_files_reproduce_cost(tmp_path, capsys):
    rc, doc, _ = run(capsys, "sensitivity-demo", "--n", 8, "--r", 0.1, "--emit", tmp_path / "demo")
    assert rc == 0 and doc["total_bound"] <= doc["estimated_total"] + 1e-12
    rc, doc, _ = run(capsys, "assign", tmp_path / "demo" / "points.csv",
                     tmp_path / "demo" / "sites_003.csv", "--config",
                     tmp_path / "demo" / "config.json", "--out", tmp_path / "a", "--diagram")
    assert rc == 0
    assert doc["cost"] == pytest.approx(7 * 0.01 + 0.81, rel=1e-9)
    assert doc["compatibility"] == "strict"


def test_malformed_row_named(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n3,oops\n")
    rc, _, err = run(capsys, "build-coreset", tmp_path / "bad.csv", "--k", 2, "--eps", 0.3)
    assert rc != 0
    diag = json.loads(err.strip().splitlines()[-1])
    assert diag["line"] == 3 and "oops" in diag["message"]


def test_missing_header(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("1,2\n3,4\n")
    rc, _, err = run(capsys, "build-coreset", tmp_path / "p.csv", "--k", 1, "--eps", 0.3)
    assert rc != 0 and "header" in err


def test_eps_too_large_rejected(mixture_csv, capsys):
    rc, _, err = run(capsys, "build-coreset", mixture_csv, "--k", 2, "--eps", 0.7)
    assert rc != 0 and "eps" in err


def test_build_coreset_and_verify(mixture_csv, tmp_path, capsys):
    out = tmp_path / "cs.json"
    rc, doc, _ = run(capsys, "build-coreset", mixture_csv, "--k", 3, "--eps", 0.5, "--out", out)
    assert rc == 0 and doc["size"] <= doc["run_bound"]
    rc, doc, _ = run(capsys, "verify", mixture_csv, out, "--k", 3, "--trials", 10,
                     "--out", tmp_path / "v")
    assert rc == 0 and doc["coreset_properties"] == "pass"
    assert (tmp_path / "v" / "report.md").read_text().startswith("### coreset_properties")


def test_cluster_k1_is_variation(tmp_path, capsys):
    X = gaussian_mixture(80, 2, seed=3)
    files.write_points(tmp_path / "p.csv", X)
    rc, doc, _ = run(capsys, "cluster", tmp_path / "p.csv", "--k", 1, "--eps", 0.3,
                     "--out", tmp_path / "c")
    c = X.centroid()
    want = float(X.weights @ ((X.points - c) ** 2).sum(1))
    assert rc == 0 and doc["refined_cost"] == pytest.approx(want, rel=1e-9)


def test_cluster_balanced_weights(mixture_csv, tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"k": 3, "kappa": [[100, 100]] * 3}))
    rc, doc, _ = run(capsys, "cluster", mixture_csv, "--config", tmp_path / "cfg.json",
                     "--eps", 0.3, "--out", tmp_path / "c")
    assert rc == 0
    np.testing.assert_allclose(doc["cluster_weights"], 100.0, rtol=1e-9)


def test_config_with_inf_and_matrices(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps(
        {"k": 2, "kappa": [[0, "inf"], [1, 5]], "A": [[[1, 0], [0, 2]], [[3, 0], [0, 1]]]}))
    k, K, A = files.read_config(tmp_path / "c.json", d=2)
    assert k == 2 and np.isinf(K.upper[0]) and A.lam_max == 3.0


def test_clustering_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    xi = rng.dirichlet([1, 1, 1], size=7).T
    xi[:, 0] = [1.0, 0.0, 0.0]
    C = Clustering(xi)
    files.write_clustering(tmp_path / "c.csv", C)
    assert np.array_equal(files.read_clustering(tmp_path / "c.csv").xi, C.xi)


def test_points_weight_column(tmp_path):
    (tmp_path / "p.csv").write_text("x,weight,y\n1,2.5,3\n4,0.5,6\n")
    X = files.read_points(tmp_path / "p.csv")
    assert X.points.tolist() == [[1, 3], [4, 6]] and X.weights.tolist() == [2.5, 0.5]


def test_plot_deterministic(tmp_path, capsys):
    rc, _, _ = run(capsys, "sensitivity-demo", "--n", 6, "--r", 0.2, "--emit", tmp_path / "d")
    args = ["assign", tmp_path / "d" / "points.csv", tmp_path / "d" / "sites_000.csv",
            "--config", tmp_path / "d" / "config.json", "--out", tmp_path / "a", "--diagram"]
    assert run(capsys, *args)[0] == 0
    plot = ["plot", tmp_path / "d" / "points.csv", "--clustering", tmp_path / "a" / "clustering.csv",
            "--sites", tmp_path / "d" / "sites_000.csv", "--diagram", tmp_path / "a" / "diagram.json"]
    assert run(capsys, *plot, "--out", tmp_path / "1.svg")[0] == 0
    assert run(capsys, *plot, "--out", tmp_path / "2.svg")[0] == 0
    a, b = (tmp_path / "1.svg").read_bytes(), (tmp_path / "2.svg").read_bytes()
    assert a == b and a.count(b"<rect") == 3 and b"<path" in a


def test_plot_points_only_and_d3_rejected(tmp_path, capsys):
    files.write_points(tmp_path / "p.csv", gaussian_mixture(10, 2))
    assert run(capsys, "plot", tmp_path / "p.csv", "--out", tmp_path / "p.svg")[0] == 0
    files.write_points(tmp_path / "q.csv", gaussian_mixture(10, 2, d=3))
    rc, _, err = run(capsys, "plot", tmp_path / "q.csv", "--out", tmp_path / "q.svg")
    assert rc != 0 and "d=2" in err


def test_fractional_point_pie(tmp_path):
    X = WeightedDataSet.unit([[0.0, 0.0], [1.0, 1.0]])
    C = Clustering(np.array([[0.5, 1.0], [0.5, 0.0]]))
    svg = files.render_svg(X, C)
    assert svg.count("<path") == 2 and svg.count("<circle") == 1


def test_net_command(tmp_path, capsys):
    rc, doc, _ = run(capsys, "net", "--eps0", 0.4, "--d", 2, "--out", tmp_path / "n.csv")
    assert rc == 0 and doc["size"] == 60
    assert len((tmp_path / "n.csv").read_text().splitlines()) == 61
