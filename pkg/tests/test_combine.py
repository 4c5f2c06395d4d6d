import numpy as np
import pytest
from scipy import sparse

from dnshin import combine, hin, metapath
from dnshin.errors import DimensionMismatchError
from dnshin.metapath import ALL_METAPATHS, Metapath


def _counts_from_dense(arrays):
    return {
        path: sparse.csr_array(np.asarray(a))
        for path, a in zip(ALL_METAPATHS, arrays)
    }


def _random_symmetric(rng, n, density=0.3, high=4):
    m = rng.integers(0, high, size=(n, n)) * (rng.random((n, n)) < density)
    m = np.triu(m)
    return m + np.triu(m, 1).T


def test_build_features_zero_matrix_column():
    n = 4
    arrays = [np.zeros((n, n), dtype=np.int64) for _ in ALL_METAPATHS]
    arrays[2] = np.full((n, n), 1, dtype=np.int64)
    w = combine.build_features(_counts_from_dense(arrays))
    assert w.shape == (n, 6)
    assert (w[:, 0] == 0).all()
    assert (w[:, 2] == n).all()


def test_build_features_diagonal_two():
    n = 3
    arrays = [2 * np.eye(n, dtype=np.int64) for _ in ALL_METAPATHS]
    w = combine.build_features(_counts_from_dense(arrays))
    assert (w == 2).all()


def test_build_features_matches_dense_row_sums():
    rng = np.random.default_rng(21)
    n = 9
    arrays = [_random_symmetric(rng, n) for _ in ALL_METAPATHS]
    w = combine.build_features(_counts_from_dense(arrays))
    for k, a in enumerate(arrays):
        assert np.allclose(w[:, k], a.sum(axis=1))


def test_build_features_dimension_mismatch():
    arrays = [np.zeros((4, 4)) for _ in ALL_METAPATHS]
    arrays[-1] = np.zeros((5, 5))
    with pytest.raises(DimensionMismatchError):
        combine.build_features(_counts_from_dense(arrays))


def _brute_knn(points, k):
    """Neighbor graph by full distance sort, OR-symmetrized."""
    n = points.shape[0]
    a = np.zeros((n, n))
    for i in range(n):
        dist = np.linalg.norm(points - points[i], axis=1)
        order = sorted((d, j) for j, d in enumerate(dist) if j != i)
        for _, j in order[:k]:
            a[i, j] = 1
            a[j, i] = 1
    return a


def test_knn_affinity_matches_bruteforce():
    rng = np.random.default_rng(4)
    points = rng.random((15, 3))
    for k in (1, 3, 6):
        got = combine.knn_affinity(points, k).toarray()
        assert (got == _brute_knn(points, k)).all()


def test_knn_affinity_bounds():
    points = np.random.default_rng(0).random((4, 2))
    with pytest.raises(ValueError):
        combine.knn_affinity(points, 0)
    with pytest.raises(ValueError):
        combine.knn_affinity(points, 4)


def _dense_score(f, a):
    """Direct dense evaluation of the locality score."""
    deg = a.sum(axis=1)
    big_d = np.diag(deg)
    lap = big_d - a
    ones = np.ones(len(f))
    centered = f - (f @ big_d @ ones) / (ones @ big_d @ ones) * ones
    var = centered @ big_d @ centered
    if var <= 0:
        return float("inf")
    return (centered @ lap @ centered) / var


def test_laplacian_scores_match_dense_oracle():
    rng = np.random.default_rng(31)
    for _ in range(5):
        n = int(rng.integers(6, 20))
        feats = rng.random((n, 6)) * 3
        a = _brute_knn(rng.random((n, 2)), 2)
        got = combine.laplacian_scores_from_graph(feats, sparse.csr_array(a))
        for r in range(6):
            assert got[r] == pytest.approx(_dense_score(feats[:, r], a), abs=1e-10)


def test_component_indicator_scores_near_zero():
    """On a two-component graph, a component-indicator feature preserves
    locality perfectly and beats a random feature."""
    a = np.zeros((10, 10))
    for block in (range(0, 5), range(5, 10)):
        for i in block:
            for j in block:
                if i != j:
                    a[i, j] = 1
    indicator = np.array([0.0] * 5 + [1.0] * 5)
    rng = np.random.default_rng(8)
    noise = rng.random(10)
    feats = np.column_stack([indicator, noise])
    scores = combine.laplacian_scores_from_graph(feats, sparse.csr_array(a))
    assert scores[0] == pytest.approx(0.0, abs=1e-12)
    assert scores[0] < scores[1]


def test_constant_feature_gets_sentinel_and_zero_weight():
    rng = np.random.default_rng(2)
    feats = rng.random((12, 6))
    feats[:, 3] = 7.0
    scores = combine.laplacian_score(feats, 3)
    assert np.isinf(scores[3])
    weights = combine.scores_to_weights(scores)
    assert weights.weights[3] == 0.0
    assert weights.weights.sum() == pytest.approx(1.0)


def test_scores_to_weights_uniform():
    w = combine.scores_to_weights(np.ones(6))
    assert np.allclose(w.weights, 1 / 6)


def test_scores_to_weights_single_finite():
    scores = np.array([1.0] + [np.inf] * 5)
    w = combine.scores_to_weights(scores)
    assert np.allclose(w.weights, [1, 0, 0, 0, 0, 0])


def test_scores_to_weights_hand_arithmetic():
    scores = np.array([1.0, 2.0, 4.0, np.inf, np.inf, np.inf])
    w = combine.scores_to_weights(scores)
    assert np.allclose(w.weights, [4 / 7, 2 / 7, 1 / 7, 0, 0, 0])


def test_scores_to_weights_scale_invariant():
    rng = np.random.default_rng(13)
    scores = rng.random(6) + 0.1
    base = combine.scores_to_weights(scores).weights
    scaled = combine.scores_to_weights(scores * 37.5).weights
    assert np.allclose(base, scaled)


def test_scores_to_weights_tiny_scores_split():
    scores = np.array([0.0, 1e-13, 0.5, 1.0, np.inf, 2.0])
    w = combine.scores_to_weights(scores)
    assert np.allclose(w.weights, [0.5, 0.5, 0, 0, 0, 0])


def test_scores_to_weights_all_degenerate_warns_uniform():
    with pytest.warns(UserWarning):
        w = combine.scores_to_weights(np.full(6, np.inf))
    assert np.allclose(w.weights, 1 / 6)


def _sims_from_dense(arrays):
    return {
        path: sparse.csr_array(np.asarray(a, dtype=np.float64))
        for path, a in zip(ALL_METAPATHS, arrays)
    }


def test_combine_single_weight_passthrough():
    rng = np.random.default_rng(3)
    arrays = [rng.random((5, 5)) for _ in ALL_METAPATHS]
    weights = np.array([0, 0, 1.0, 0, 0, 0])
    out = combine.combine(weights, _sims_from_dense(arrays)).toarray()
    assert np.allclose(out, arrays[2])


def test_combine_uniform_identical_matrices():
    base = np.random.default_rng(5).random((4, 4))
    out = combine.combine(np.full(6, 1 / 6), _sims_from_dense([base] * 6)).toarray()
    assert np.allclose(out, base)


def test_combine_matches_dense_weighted_sum():
    rng = np.random.default_rng(17)
    arrays = [rng.random((10, 10)) for _ in ALL_METAPATHS]
    raw = rng.random(6)
    weights = raw / raw.sum()
    out = combine.combine(weights, _sims_from_dense(arrays)).toarray()
    expected = sum(w * a for w, a in zip(weights, arrays))
    assert np.allclose(out, expected)


def test_combine_dimension_mismatch():
    arrays = [np.zeros((4, 4)) for _ in ALL_METAPATHS]
    arrays[4] = np.zeros((3, 3))
    with pytest.raises(DimensionMismatchError):
        combine.combine(np.full(6, 1 / 6), _sims_from_dense(arrays))


def _toy_graph(rng, n_d=14, n_c=8, n_ip=7):
    registry = hin.NodeRegistry(
        clients=tuple(f"c{i}" for i in range(n_c)),
        domains=tuple(f"d{i}.test" for i in range(n_d)),
        ips=tuple(f"10.1.0.{i}" for i in range(n_ip)),
    )
    q = (rng.random((n_d, n_c)) < 0.4).astype(np.int64)
    r = (rng.random((n_d, n_ip)) < 0.3).astype(np.int64)
    seg_of = rng.integers(0, 2, size=n_c)
    seg = ((seg_of[:, None] == seg_of[None, :]) & ~np.eye(n_c, dtype=bool)).astype(np.int64)
    s = _random_symmetric(rng, n_d, density=0.2, high=2)
    np.fill_diagonal(s, 0)
    s = (s > 0).astype(np.int64)
    resolve = sparse.csr_array(r)
    graph = hin.HinGraph(
        registry=registry,
        query=sparse.csr_array(q),
        segment=sparse.csr_array(seg),
        resolve=resolve,
        name_sim=sparse.csr_array(s),
        cname=sparse.csr_array((n_d, n_d), dtype=np.int64),
        ip_overlap=hin.build_ip_overlap_matrix(resolve),
    )
    graph.validate()
    return graph


def test_combiner_estimator_outputs():
    graph = _toy_graph(np.random.default_rng(41))
    combiner = combine.MetapathCombiner(score_knn=3).fit(graph)
    assert combiner.weights_.weights.sum() == pytest.approx(1.0)
    assert (combiner.weights_.weights >= 0).all()
    dense = combiner.combined_.toarray()
    assert dense.shape == (14, 14)
    assert np.allclose(dense, dense.T)
    assert dense.max() <= 1.0 + 1e-12
    report = combiner.weights_.as_dict()
    assert set(report) == {p.value for p in ALL_METAPATHS}


def test_combiner_deterministic():
    graph = _toy_graph(np.random.default_rng(43))
    a = combine.MetapathCombiner(score_knn=3).fit(graph)
    b = combine.MetapathCombiner(score_knn=3).fit(graph)
    assert np.array_equal(a.weights_.weights, b.weights_.weights)
    assert (a.combined_ != b.combined_).nnz == 0


def test_combined_similarity_permutation_equivariant():
    rng = np.random.default_rng(59)
    graph = _toy_graph(rng)
    n_d = graph.registry.n_domains
    perm = rng.permutation(n_d)
    permuted = hin.HinGraph(
        registry=hin.NodeRegistry(
            clients=graph.registry.clients,
            domains=tuple(graph.registry.domains[i] for i in perm),
            ips=graph.registry.ips,
        ),
        query=graph.query[perm],
        segment=graph.segment,
        resolve=graph.resolve[perm],
        name_sim=graph.name_sim[perm][:, perm],
        cname=graph.cname[perm][:, perm],
        ip_overlap=graph.ip_overlap,
    )
    base = combine.MetapathCombiner(score_knn=3).fit(graph).combined_.toarray()
    shuffled = combine.MetapathCombiner(score_knn=3).fit(permuted).combined_.toarray()
    assert np.allclose(shuffled, base[perm][:, perm])


def test_combiner_single_domain_falls_back():
    registry = hin.NodeRegistry(clients=("c0",), domains=("only.test",), ips=())
    graph = hin.HinGraph(
        registry=registry,
        query=sparse.csr_array(np.ones((1, 1), dtype=np.int64)),
        segment=sparse.csr_array((1, 1), dtype=np.int64),
        resolve=sparse.csr_array((1, 0), dtype=np.int64),
        name_sim=sparse.csr_array((1, 1), dtype=np.int64),
        cname=sparse.csr_array((1, 1), dtype=np.int64),
        ip_overlap=sparse.csr_array((0, 0), dtype=np.int64),
    )
    with pytest.warns(UserWarning):
        combiner = combine.MetapathCombiner().fit(graph)
    assert combiner.weights_.weights.sum() == pytest.approx(1.0)
