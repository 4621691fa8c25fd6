"""Edge weights, k-NN selection, and full graph construction."""
import math

import numpy as np
import pytest

from corrcast.errors import DegenerateGraphError
from corrcast.features import FeatureWeights, adjusted_cosine
from corrcast.graph import (
    SimilarityParams,
    build_graph,
    edge_weight,
    knn_neighbors,
    similarity_matrix,
)
from corrcast.model import WindowConfig, validate

DEFAULTS = SimilarityParams(alpha1=20.0, alpha2=0.0, k=200)


class TestEdgeWeight:
    def test_midpoint_is_half(self):
        assert edge_weight(0.0, DEFAULTS) == 0.5
        assert edge_weight(0.3, SimilarityParams(alpha1=5.0, alpha2=0.3, k=1)) == 0.5

    def test_documented_value(self):
        # independent evaluation of the squashing curve at alpha1=20, m=0.1
        expected = (math.tanh(2.0) + 1.0) / 2.0
        assert edge_weight(0.1, DEFAULTS) == pytest.approx(expected, abs=1e-15)

    def test_saturated_low_end_stays_positive(self):
        # the tanh form underflows to 0 in double precision here; the
        # logistic form keeps the true magnitude ~4.25e-18
        w = edge_weight(-1.0, DEFAULTS)
        assert abs(w - (math.tanh(-20.0) + 1.0) / 2.0) < 1e-15
        assert 0.0 < w < 1e-15

    def test_saturated_high_end_stays_below_one(self):
        assert 0.0 < edge_weight(1.0, DEFAULTS) < 1.0

    def test_strictly_increasing(self):
        grid = np.linspace(-0.4, 0.4, 81)
        values = [edge_weight(float(m), DEFAULTS) for m in grid]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_open_interval_on_grid(self):
        for m in np.linspace(-1.0, 1.0, 201):
            w = edge_weight(float(m), DEFAULTS)
            assert 0.0 < w < 1.0

    def test_vectorized_matches_scalar(self):
        grid = np.linspace(-1.0, 1.0, 17)
        vec = edge_weight(grid, DEFAULTS)
        for m, w in zip(grid, vec):
            assert w == edge_weight(float(m), DEFAULTS)

    def test_rejects_out_of_range_similarity(self):
        with pytest.raises(ValueError):
            edge_weight(1.5, DEFAULTS)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            SimilarityParams(alpha1=0.0)
        with pytest.raises(ValueError):
            SimilarityParams(alpha2=1.0)
        with pytest.raises(ValueError):
            SimilarityParams(k=0)


class TestKnnNeighbors:
    def test_three_node_enumeration(self):
        # s01 > s02 > s12: node 0 picks 1, node 1 picks 0, node 2 picks 0;
        # union keeps exactly the pairs {0,1} and {0,2}
        sims = np.array([
            [1.0, 0.9, 0.5],
            [0.9, 1.0, 0.1],
            [0.5, 0.1, 1.0],
        ])
        mask = knn_neighbors(sims, k=1)
        expected = np.array([
            [False, True, True],
            [True, False, False],
            [True, False, False],
        ])
        assert np.array_equal(mask, expected)

    def test_k_saturates_to_complete_graph(self):
        rng = np.random.default_rng(0)
        sims = rng.uniform(-1, 1, size=(6, 6))
        sims = (sims + sims.T) / 2
        for k in (5, 6, 200):
            mask = knn_neighbors(sims, k=k)
            expected = ~np.eye(6, dtype=bool)
            assert np.array_equal(mask, expected)

    def test_ties_resolved_by_lower_index(self):
        sims = np.full((4, 4), 0.5)
        np.fill_diagonal(sims, 1.0)
        mask = knn_neighbors(sims, k=1)
        # every node picks node 0 (node 0 picks node 1); union of those pairs
        assert mask[1, 0] and mask[2, 0] and mask[3, 0]
        assert mask[0, 1]
        assert not mask[2, 3] and not mask[3, 2]

    def test_symmetry_and_no_self_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(2, 12))
            sims = rng.uniform(-1, 1, size=(n, n))
            sims = (sims + sims.T) / 2
            k = int(rng.integers(1, n + 2))
            mask = knn_neighbors(sims, k)
            assert np.array_equal(mask, mask.T)
            assert not np.any(np.diagonal(mask))

    def test_every_node_keeps_at_least_k_neighbors(self):
        rng = np.random.default_rng(2)
        sims = rng.uniform(-1, 1, size=(10, 10))
        sims = (sims + sims.T) / 2
        for k in (1, 3, 5):
            mask = knn_neighbors(sims, k)
            assert np.all(mask.sum(axis=1) >= k)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            knn_neighbors(np.eye(3), 0)


class TestSimilarityMatrix:
    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(3)
        weighted = rng.normal(size=(8, 5))
        f_bar = weighted.mean(axis=0)
        sims = similarity_matrix(weighted)
        for i in range(8):
            for j in range(8):
                if i == j:
                    continue
                expected = adjusted_cosine(weighted[i], weighted[j], f_bar)
                assert sims[i, j] == pytest.approx(expected, abs=1e-12)

    def test_degenerate_row_substitutes_zero(self):
        # row 2 is the midpoint of rows 0 and 1, hence equals the mean of all
        # three rows and centers to the zero vector
        weighted = np.array([[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]])
        sims = similarity_matrix(weighted)
        assert np.all(sims[2] == 0.0)
        assert np.all(sims[:, 2] == 0.0)
        assert sims[0, 1] == pytest.approx(-1.0, abs=1e-12)
        assert sims[0, 0] == 1.0 and sims[1, 1] == 1.0

    def test_bit_exact_symmetry(self):
        rng = np.random.default_rng(4)
        weighted = rng.normal(size=(30, 14))
        sims = similarity_matrix(weighted)
        assert np.array_equal(sims, sims.T)


def window_features(rng, window):
    return rng.normal(size=(window.n_nodes, 5))


class TestBuildGraph:
    def test_two_node_graph(self):
        window = WindowConfig(t_h=1, t_f=1, l=1)  # 3 nodes; use k=2 complete
        rng = np.random.default_rng(5)
        feats = window_features(rng, window)
        labels = np.zeros(3)
        labels[0] = 12.0
        mask = np.array([True, False, False])
        g = build_graph(7, window, feats, mask, labels, FeatureWeights.uniform(5),
                        SimilarityParams(alpha1=2.0, alpha2=0.0, k=2))
        assert g.weights[0, 1] == g.weights[1, 0]
        assert np.all(np.diagonal(g.weights) == 0.0)
        assert g.degrees[0] == g.weights[0].sum()

    def test_matches_brute_force_oracle(self):
        # independent reconstruction with explicit loops and library-free math
        window = WindowConfig(t_h=1, t_f=2, l=1)  # 4 nodes
        rng = np.random.default_rng(6)
        feats = rng.normal(size=(4, 3))
        beta = np.array([0.2, 0.5, 0.3])
        params = SimilarityParams(alpha1=4.0, alpha2=0.1, k=2)
        mask = np.array([True, False, False, False])
        values = np.array([9.0, 0.0, 0.0, 0.0])
        g = build_graph(11, window, feats, mask, values,
                        FeatureWeights(tuple(beta)), params)

        weighted = [[feats[i][d] * beta[d] for d in range(3)] for i in range(4)]
        f_bar = [sum(weighted[i][d] for i in range(4)) / 4.0 for d in range(3)]
        centered = [[weighted[i][d] - f_bar[d] for d in range(3)] for i in range(4)]
        def dot(a, b):
            return sum(x * y for x, y in zip(a, b))
        sims = [[0.0] * 4 for _ in range(4)]
        for i in range(4):
            for j in range(4):
                if i != j:
                    sims[i][j] = dot(centered[i], centered[j]) / math.sqrt(
                        dot(centered[i], centered[i]) * dot(centered[j], centered[j]))
        keep = set()
        for i in range(4):
            ranked = sorted((j for j in range(4) if j != i),
                            key=lambda j: (-sims[i][j], j))
            for j in ranked[:2]:
                keep.add((min(i, j), max(i, j)))
        expected = np.zeros((4, 4))
        for i, j in keep:
            w = (math.tanh(params.alpha1 * (sims[i][j] - params.alpha2)) + 1.0) / 2.0
            expected[i, j] = expected[j, i] = w
        assert np.allclose(g.weights, expected, atol=1e-12)
        assert np.allclose(g.degrees, expected.sum(axis=1), atol=1e-12)

    def test_deterministic_bit_identical(self):
        window = WindowConfig(t_h=2, t_f=1, l=3)
        rng = np.random.default_rng(7)
        feats = window_features(rng, window)
        mask = np.zeros(window.n_nodes, dtype=bool)
        mask[0] = True
        values = np.zeros(window.n_nodes)
        values[0] = 3.0
        args = (9, window, feats, mask, values, FeatureWeights.uniform(5),
                SimilarityParams(alpha1=10.0, alpha2=0.0, k=4))
        g1 = build_graph(*args)
        g2 = build_graph(*args)
        assert np.array_equal(g1.weights, g2.weights)
        assert np.array_equal(g1.degrees, g2.degrees)

    def test_permutation_equivariance(self):
        window = WindowConfig(t_h=1, t_f=1, l=4)
        rng = np.random.default_rng(8)
        feats = window_features(rng, window)
        n = window.n_nodes
        mask = np.zeros(n, dtype=bool)
        values = np.zeros(n)
        params = SimilarityParams(alpha1=6.0, alpha2=0.0, k=n)  # complete graph
        g = build_graph(4, window, feats, mask, values, FeatureWeights.uniform(5), params)
        perm = rng.permutation(n)
        g_perm = build_graph(4, window, feats[perm], mask, values,
                             FeatureWeights.uniform(5), params)
        assert np.allclose(g_perm.weights, g.weights[np.ix_(perm, perm)], atol=1e-12)

    def test_constructed_graphs_pass_validation(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            window = WindowConfig(
                t_h=int(rng.integers(1, 4)),
                t_f=int(rng.integers(1, 4)),
                l=int(rng.integers(2, 8)),
            )
            n = window.n_nodes
            feats = rng.normal(size=(n, 6))
            mask = np.zeros(n, dtype=bool)
            mask[int(rng.integers(0, window.l))] = True
            values = np.where(mask, 10.0, 0.0)
            g = build_graph(5, window, feats, mask, values,
                            FeatureWeights.uniform(6),
                            SimilarityParams(alpha1=8.0, alpha2=0.0,
                                             k=int(rng.integers(1, n))))
            validate(g)

    def test_identical_features_yield_half_weights(self):
        # all nodes degenerate: similarities substitute 0, kept edges get 1/2
        window = WindowConfig(t_h=1, t_f=1, l=2)
        feats = np.ones((window.n_nodes, 4))
        mask = np.zeros(window.n_nodes, dtype=bool)
        g = build_graph(3, window, feats, mask, np.zeros(window.n_nodes),
                        FeatureWeights.uniform(4),
                        SimilarityParams(alpha1=20.0, alpha2=0.0, k=2))
        kept = g.weights[g.weights > 0]
        assert np.all(kept == 0.5)

    def test_isolated_node_raises(self):
        # row 2 is the midpoint of rows 0 and 1 -> it equals the mean, its
        # similarities substitute 0, and a high alpha2 crushes weight(0) far
        # below the degree floor, isolating the node
        window = WindowConfig(t_h=1, t_f=1, l=1)
        feats = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        with pytest.raises(DegenerateGraphError):
            build_graph(1, window, feats, np.zeros(3, dtype=bool), np.zeros(3),
                        FeatureWeights.uniform(2),
                        SimilarityParams(alpha1=30.0, alpha2=0.9, k=2))
