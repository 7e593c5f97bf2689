import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_norms, random_spd
from wcacoreset.core import (
    Clustering,
    DimensionError,
    InfeasibleBoundsError,
    NormFamily,
    SiteSet,
    WCAError,
    WeightBounds,
    WeightedDataSet,
    centroid_and_weight,
    centroids,
    cost,
    distance_matrix,
    opt_site_cost,
    variation,
)


def test_dataset_rejects_bad_weights():
    with pytest.raises(WCAError):
        WeightedDataSet(np.zeros((2, 2)), [1.0, 0.0])
    with pytest.raises(DimensionError):
        WeightedDataSet(np.zeros((3, 2)), [1.0, 1.0])
    with pytest.raises(WCAError):
        WeightedDataSet(np.array([[0.0, np.nan]]), [1.0])


def test_dataset_is_immutable():
    X = WeightedDataSet.unit([[0.0, 1.0], [2.0, 3.0]])
    with pytest.raises(ValueError):
        X.points[0, 0] = 5.0
    assert X.total_weight == 2.0
    np.testing.assert_allclose(X.centroid(), [1.0, 2.0])


def test_clustering_validates_columns():
    with pytest.raises(WCAError):
        Clustering(np.array([[0.5, 1.0], [0.4, 0.0]]))
    with pytest.raises(WCAError):
        Clustering(np.array([[1.5, 1.0], [-0.5, 0.0]]))
    C = Clustering.from_labels([0, 1, 1], 3)
    assert C.is_integral()
    np.testing.assert_array_equal(C.labels(), [0, 1, 1])
    np.testing.assert_allclose(C.cluster_weights([1, 2, 3]), [1, 5, 0])


def test_void_cluster_centroid_is_origin():
    X = WeightedDataSet.unit([[1.0, 1.0], [3.0, 1.0]])
    C = Clustering.from_labels([0, 0], 2)
    c, w = centroid_and_weight(X, C, 1)
    assert w == 0.0
    np.testing.assert_array_equal(c, [0.0, 0.0])
    cs, ws = centroids(X, C)
    np.testing.assert_allclose(cs[0], [2.0, 1.0])
    np.testing.assert_allclose(ws, [2.0, 0.0])


def test_bounds_feasibility_message():
    K = WeightBounds(np.array([3.0, 3.0]), np.array([4.0, 4.0]))
    with pytest.raises(InfeasibleBoundsError, match="sum of lower bounds"):
        K.check_feasible(5.0)
    K.check_feasible(7.0)
    with pytest.raises(WCAError):
        WeightBounds(np.array([2.0]), np.array([1.0]))
    assert WeightBounds.unconstrained(3).is_unconstrained(10.0)
    assert not WeightBounds.balanced(9.0, 3).is_unconstrained(9.0)


def test_norm_family_rejects_indefinite():
    with pytest.raises(WCAError):
        NormFamily(np.array([[[1.0, 0.0], [0.0, -1.0]]]))
    with pytest.raises(WCAError):
        NormFamily(np.array([[[1.0, 0.5], [0.0, 1.0]]]))
    A = NormFamily(np.array([np.diag([1.0, 4.0]), np.diag([2.0, 0.5])]))
    assert A.lam_max == pytest.approx(4.0)
    assert A.lam_min == pytest.approx(0.5)
    assert A.condition == pytest.approx(8.0)


def test_cost_by_hand():
    X = WeightedDataSet(np.array([[0.0, 0.0], [2.0, 0.0]]), np.array([1.0, 3.0]))
    S = SiteSet(np.array([[0.0, 0.0], [2.0, 1.0]]))
    A = NormFamily(np.array([np.eye(2), np.diag([1.0, 5.0])]))
    C = Clustering(np.array([[0.5, 0.0], [0.5, 1.0]]))
    # point 0: 0.5*0 + 0.5*(4+5); point 1: 3*(0+5)
    assert cost(X, C, S, A) == pytest.approx(4.5 + 15.0)
    D = distance_matrix(X, S, A)
    np.testing.assert_allclose(D, [[0.0, 4.0], [9.0, 5.0]])


def test_opt_site_cost_is_minimal_over_sites(rng):
    X = WeightedDataSet(rng.normal(size=(20, 3)), rng.uniform(0.5, 2, 20))
    A = random_norms(rng, 2, 3)
    xi = rng.dirichlet(np.ones(2), size=20).T
    C = Clustering(xi)
    best = opt_site_cost(X, C, A)
    for _ in range(20):
        S = SiteSet(rng.normal(size=(2, 3)))
        assert best <= cost(X, C, S, A) + 1e-12


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12), d=st.integers(1, 4))
def test_center_replacement_identity(seed, n, d):
    rng = np.random.default_rng(seed)
    X = WeightedDataSet(rng.normal(size=(n, d)) * 3, rng.uniform(0.1, 5.0, n))
    M = random_spd(rng, d)
    s = rng.normal(size=d) * 4
    lhs = float(X.weights @ np.einsum("nd,de,ne->n", X.points - s, M, X.points - s))
    c = X.centroid()
    rhs = X.total_weight * float((c - s) @ M @ (c - s)) + variation(X, M)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12), d=st.integers(1, 4))
def test_norm_equivalence(seed, n, d):
    rng = np.random.default_rng(seed)
    X = WeightedDataSet(rng.normal(size=(n, d)), rng.uniform(0.1, 5.0, n))
    M = random_spd(rng, d, 0.01, 10.0)
    ev = np.linalg.eigvalsh(M)
    ve, va = variation(X), variation(X, M)
    tol = 1e-9 * max(va, 1e-300)
    assert ev[0] * ve <= va + tol
    assert va <= ev[-1] * ve + tol
