import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st
from sklearn.metrics import adjusted_rand_score

from uaix import spray as S
from uaix.uai import RelevanceSet


def components(M):
    # union-find oracle
    parent = list(range(len(M)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in zip(*np.nonzero(M)):
        parent[find(i)] = find(j)
    return len({find(i) for i in range(len(M))})


def random_graph(rng, n, p):
    A = np.triu(rng.random((n, n)) < p, 1).astype(float)
    return A + A.T


def planted(rng, sizes=(70, 30), shape=(8, 8), noise=0.05):
    """Two strategy families with disjoint support, each a noisy template."""
    H, W = shape
    t = np.zeros((2, H, W))
    t[0, : H // 2] = 1.0
    t[1, H // 2:] = 1.0
    maps, truth = [], []
    for c, n in enumerate(sizes):
        for _ in range(n):
            maps.append(t[c] * (1 + noise * rng.normal(size=shape)))
            truth.append(c)
    order = rng.permutation(len(maps))
    return np.array(maps)[order], np.array(truth)[order]


# -- preprocess --


def test_preprocess_pool1_is_minmax_only():
    m = np.array([[[-2.0, 0.0], [1.0, 4.0]]])
    np.testing.assert_array_equal(S.preprocess(m, 1), [[-1.0, 0.0, 0.25, 1.0]])


def test_preprocess_constant_and_block_means():
    np.testing.assert_array_equal(S.preprocess(np.ones((1, 4, 4)), 2), np.ones((1, 4)))
    rows = np.repeat(np.arange(4.0)[:, None], 4, axis=1)[None]  # row index values, max 3
    # blocks: rows {0,1} -> 0.5, rows {2,3} -> 2.5, then divided by the max 3
    np.testing.assert_allclose(S.preprocess(rows, 2), [[0.5 / 3, 0.5 / 3, 2.5 / 3, 2.5 / 3]], rtol=1e-15)


def test_preprocess_edge_pads():
    m = np.arange(9.0).reshape(1, 3, 3) + 1
    v = S.preprocess(m, 2)
    assert v.shape == (1, 4)
    # bottom-right cell is the edge-replicated value 9, normalized by 9
    assert v[0, 3] == 1.0


# -- affinity --


def test_knn_examples():
    np.testing.assert_array_equal(S.knn_affinity([[0.0], [1.0]], 1), [[0, 1], [1, 0]])
    M = S.knn_affinity([[0.0], [1.0], [10.0]], 1)
    np.testing.assert_array_equal(M, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def test_knn_ties_go_to_lower_index():
    M = S.knn_affinity([[0.0], [-1.0], [1.0], [1.1]], 1)
    # point 0 is equally close to 1 and 2 and picks 1; nobody else picks 0 or 2 across
    assert M[0, 1] == 1 and M[0, 2] == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 30))
def test_knn_structure(seed, n):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n))
    M = S.knn_affinity(rng.normal(size=(n, 4)), k)
    assert np.array_equal(M, M.T)
    assert np.all(np.diag(M) == 0)
    assert np.all(M.sum(axis=1) >= k)
    assert set(np.unique(M)) <= {0.0, 1.0}


def test_knn_errors():
    with pytest.raises(ValueError):
        S.knn_affinity([[0.0]], 1)
    with pytest.raises(ValueError):
        S.knn_affinity([[0.0], [1.0]], 2)


# -- spectrum --


def test_spectrum_examples():
    _, vals, _ = S.laplacian_spectrum([[0, 1], [1, 0]])
    np.testing.assert_allclose(vals, [0, 2], atol=1e-12)
    clique = np.ones((3, 3)) - np.eye(3)
    M = np.block([[clique, np.zeros((3, 3))], [np.zeros((3, 3)), clique]])
    _, vals, _ = S.laplacian_spectrum(M)
    assert np.sum(np.abs(vals) < 1e-8) == 2


@pytest.mark.parametrize("seed", range(5))
def test_spectrum_matches_characteristic_polynomial(seed):
    rng = np.random.default_rng(seed)
    M = random_graph(rng, 6, 0.5)
    L, vals, vecs = S.laplacian_spectrum(M)
    x = sympy.symbols("x")
    roots = sorted(float(sympy.re(r)) for r in sympy.Matrix(L.astype(int)).charpoly(x).all_roots())
    np.testing.assert_allclose(vals, roots, atol=1e-6)
    np.testing.assert_allclose(L @ vecs, vecs * vals, atol=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_zero_eigenvalues_count_components(seed):
    rng = np.random.default_rng(seed)
    for _ in range(10):
        n = int(rng.integers(2, 25))
        M = random_graph(rng, n, float(rng.uniform(0.02, 0.3)))
        L, vals, _ = S.laplacian_spectrum(M)
        assert int(np.sum(np.abs(vals) < 1e-8)) == components(M)
        assert np.all(vals >= -1e-8)
        assert np.max(np.abs(L.sum(axis=1))) <= 1e-9


def test_spectrum_rejects_asymmetric():
    with pytest.raises(ValueError):
        S.laplacian_spectrum([[0, 1], [0, 0]])


# -- eigengap --


def test_eigengap_examples():
    assert S.eigengap_select([0, 0, 0, 5, 6, 7], 15) == 3
    assert S.eigengap_select([0, 0.01, 0.02, 3.0, 3.1], 15) == 3
    assert S.eigengap_select(np.arange(10.0), 15) == 1
    with pytest.raises(ValueError):
        S.eigengap_select([0, 1], 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_eigengap_recovers_planted_gap(seed, k):
    rng = np.random.default_rng(seed)
    low = np.sort(rng.uniform(0, 0.1, size=k))
    high = np.sort(rng.uniform(5, 5.1, size=20))
    assert S.eigengap_select(np.concatenate([low, high]), 15) == k


def test_disjoint_components_set_k():
    # the largest gap sits after the fourth eigenvalue, but three are exactly zero
    assert S.eigengap_select([0, 0, 0, 0.5, 100.0, 100.5], 15) == 3
    assert S.eigengap_select([0, 1e-12, 2e-12, 0.5, 0.6], 15) == 3
    # a single zero leaves the choice to the gap
    assert S.eigengap_select([0, 0.1, 0.2, 4.0, 4.1], 15) == 3


# -- k-means and labels --


def test_canonical_labels():
    np.testing.assert_array_equal(S.canonical_labels([5, 5, 2, 2, 2, 7]), [1, 1, 0, 0, 0, 2])
    np.testing.assert_array_equal(S.canonical_labels([3, 1, 1, 3]), [0, 1, 1, 0])


def test_kmeans_separates_blobs():
    rng = np.random.default_rng(0)
    Y = np.concatenate([rng.normal(0, 0.1, (20, 2)), rng.normal(5, 0.1, (15, 2)), rng.normal((0, 5), 0.1, (10, 2))])
    truth = np.repeat([0, 1, 2], [20, 15, 10])
    labels = S.kmeans(Y, 3, seed=4)
    assert adjusted_rand_score(truth, labels) == 1.0
    np.testing.assert_array_equal(S.kmeans(Y, 3, seed=4), labels)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=40), st.integers(0, 2**32 - 1))
def test_ari_matches_sklearn(a, seed):
    b = np.random.default_rng(seed).integers(0, 3, size=len(a))
    assert math.isclose(S.adjusted_rand_index(a, b), adjusted_rand_score(a, b), abs_tol=1e-12)
    assert math.isclose(S.adjusted_rand_index(a, a), 1.0)


# -- full pipeline --


def test_identical_maps_form_one_cluster():
    m = np.random.default_rng(0).normal(size=(1, 6, 6))
    res = S.cluster(np.repeat(m, 20, axis=0), k_nn=5, pool=2, max_k=15)
    assert res.k == 1 and res.strengths == (1.0,)
    np.testing.assert_allclose(res.means[0], m[0].astype(np.float32))


@pytest.mark.parametrize("seed", range(5))
def test_planted_families_recovered(seed):
    rng = np.random.default_rng(seed)
    maps, truth = planted(rng)
    res = S.cluster(RelevanceSet(maps), k_nn=10, pool=2, max_k=15, seed=seed)
    assert res.k == 2
    assert res.strengths == (0.7, 0.3)
    assert adjusted_rand_score(truth, res.labels) == 1.0
    big = int(np.argmax(np.bincount(truth)))
    np.testing.assert_allclose(res.means[0], maps[truth == big].mean(axis=0).astype(np.float32), rtol=1e-6)
    assert math.fsum(res.strengths) == 1.0
    assert res.embedding.shape == (100, 2)
    assert abs(res.eigenvalues[0]) < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(20, 60), st.integers(2, 5))
def test_pipeline_invariants(seed, n, k_nn):
    rng = np.random.default_rng(seed)
    res = S.cluster(rng.normal(size=(n, 5, 5)), k_nn=k_nn, pool=2, max_k=10, seed=seed)
    assert math.fsum(res.strengths) == 1.0
    assert set(res.labels) == set(range(res.k))
    assert list(res.sizes) == sorted(res.sizes, reverse=True)


def test_pipeline_deterministic():
    rng = np.random.default_rng(3)
    maps = rng.normal(size=(40, 6, 6))
    a = S.cluster(maps, k_nn=5, max_k=10, seed=7)
    b = S.cluster(maps, k_nn=5, max_k=10, seed=7)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.means, b.means)
    assert a.report() == b.report()


def test_cluster_needs_enough_samples():
    with pytest.raises(ValueError):
        S.cluster(np.zeros((5, 4, 4)), k_nn=2, max_k=15)
