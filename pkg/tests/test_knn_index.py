import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lasenn.knn_index import KnnIndex, Metric, score
from oracles import brute_force_knn


def assert_matches_oracle(index, corpus, q, k, metric, exclude=None):
    got = index.query(q, k, exclude=exclude)
    want = brute_force_knn(corpus.astype(np.float32).tolist(),
                           np.asarray(q, dtype=np.float64).tolist(), k, metric.value, exclude)
    assert got.indices.tolist() == [i for i, _ in want]
    np.testing.assert_allclose(got.scores, [s for _, s in want], rtol=1e-6, atol=1e-12)


class TestQuery:
    def test_hand_example(self):
        idx = KnnIndex([[0, 0], [1, 0], [3, 0]], Metric.SQUARED_L2)
        nn = idx.query(np.array([0.9, 0.0]), 2)
        assert nn.indices.tolist() == [1, 0]
        # 0.9 is not exactly representable; scores are (1-0.9)^2 and 0.9^2
        np.testing.assert_allclose(nn.scores, [0.01, 0.81], rtol=1e-6)

    def test_three_rows_match_bruteforce(self):
        corpus = np.array([[0.5, 1.0], [2.0, -1.0], [0.0, 0.1]], dtype=np.float32)
        idx = KnnIndex(corpus)
        for q in ([0, 0], [1, 1], [2, -2], [0.25, 0.55]):
            assert_matches_oracle(idx, corpus, q, 3, Metric.SQUARED_L2)

    def test_single_row(self):
        idx = KnnIndex([[1.0, 2.0, 3.0]])
        for q in ([0, 0, 0], [9, 9, 9]):
            assert idx.query(np.array(q, float), 5).indices.tolist() == [0]

    @pytest.mark.parametrize("metric,self_score", [(Metric.SQUARED_L2, 0.0), (Metric.COSINE, 1.0)])
    def test_self_is_nearest(self, metric, self_score):
        rng = np.random.default_rng(3)
        corpus = rng.standard_normal((20, 6)).astype(np.float32)
        nn = KnnIndex(corpus, metric).query(corpus[5], 1)
        assert nn.indices.tolist() == [5]
        assert nn.scores[0] == pytest.approx(self_score, abs=1e-12)

    @pytest.mark.parametrize("metric", list(Metric))
    def test_exclude_returns_second_nearest(self, metric):
        rng = np.random.default_rng(4)
        corpus = rng.standard_normal((30, 5)).astype(np.float32)
        idx = KnnIndex(corpus, metric)
        nn = idx.query(corpus[5], 1, exclude=5)
        assert nn.indices[0] != 5
        assert_matches_oracle(idx, corpus, corpus[5], 1, metric, exclude=5)

    def test_ties_break_to_lower_row(self):
        idx = KnnIndex([[1, 0], [-1, 0], [0, 1], [0, -1]])
        assert idx.query(np.zeros(2), 4).indices.tolist() == [0, 1, 2, 3]

    def test_k_larger_than_corpus(self):
        idx = KnnIndex(np.eye(3))
        assert len(idx.query(np.zeros(3), 10)) == 3
        assert len(idx.query(np.zeros(3), 10, exclude=1)) == 2

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            KnnIndex(np.eye(3)).query(np.zeros(2), 1)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            KnnIndex(np.eye(3)).query(np.zeros(3), 0)

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            KnnIndex(np.zeros((0, 3)))


class TestCosine:
    def test_zero_row_excluded_with_warning(self):
        with pytest.warns(RuntimeWarning):
            idx = KnnIndex([[0, 0], [1, 0], [0, 1]], Metric.COSINE)
        assert idx.zero_rows.tolist() == [0]
        nn = idx.query(np.array([1.0, 1.0]), 3)
        assert sorted(nn.indices.tolist()) == [1, 2]

    def test_zero_query_rejected(self):
        idx = KnnIndex(np.eye(2), Metric.COSINE)
        with pytest.raises(ValueError):
            idx.query(np.zeros(2), 1)

    def test_descending_order(self):
        rng = np.random.default_rng(5)
        idx = KnnIndex(rng.standard_normal((50, 4)), Metric.COSINE)
        s = idx.query(rng.standard_normal(4), 10).scores
        assert np.all(np.diff(s) <= 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        corpus = rng.standard_normal((40, 8)).astype(np.float32)
        q = rng.standard_normal(8)
        idx = KnnIndex(corpus, Metric.COSINE)
        a = idx.query(q, 5).indices
        b = idx.query(q * scale, 5).indices
        assert a.tolist() == b.tolist()


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(list(Metric)))
    def test_oracle_equivalence(self, seed, metric):
        rng = np.random.default_rng(seed)
        rows, dims = rng.integers(1, 60), rng.integers(1, 12)
        corpus = rng.standard_normal((rows, dims)).astype(np.float32)
        q = rng.standard_normal(dims)
        k = int(rng.integers(1, 8))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            idx = KnnIndex(corpus, metric)
        assert_matches_oracle(idx, corpus, q, k, metric)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(list(Metric)))
    def test_metric_symmetry(self, seed, metric):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, 7))
        assert score(a, b, metric) == score(b, a, metric)

    def test_sorted_distinct(self):
        rng = np.random.default_rng(6)
        idx = KnnIndex(rng.standard_normal((100, 3)))
        nn = idx.query(rng.standard_normal(3), 20)
        assert len(set(nn.indices.tolist())) == 20
        assert np.all(np.diff(nn.scores) >= 0)

    def test_batch_matches_single_bitwise(self):
        rng = np.random.default_rng(8)
        corpus = rng.standard_normal((300, 16)).astype(np.float32)
        queries = rng.standard_normal((50, 16))
        for metric in Metric:
            idx = KnnIndex(corpus, metric)
            bi, bs = idx.query_batch(queries, 4)
            for j, q in enumerate(queries):
                nn = idx.query(q, 4)
                assert nn.indices.tolist() == bi[j].tolist()
                assert nn.scores.tobytes() == bs[j].tobytes()

    def test_deterministic_across_instances(self):
        rng = np.random.default_rng(9)
        corpus = rng.standard_normal((200, 10)).astype(np.float32)
        q = rng.standard_normal((20, 10))
        a = KnnIndex(corpus).query_batch(q, 5)
        b = KnnIndex(corpus.copy()).query_batch(q, 5)
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


class TestPrefilter:
    @pytest.mark.parametrize("metric", list(Metric))
    def test_near_duplicates_and_ties(self, metric):
        # many rows nearly equidistant from the query stress the candidate cut-off
        rng = np.random.default_rng(13)
        base = rng.standard_normal(6).astype(np.float32)
        corpus = np.repeat(base[None, :], 120, axis=0)
        corpus[::3] += np.float32(1e-6)
        corpus[60:] = rng.standard_normal((60, 6)).astype(np.float32)
        idx = KnnIndex(corpus, metric)
        for q in (base.astype(np.float64), base + 1e-7, rng.standard_normal(6)):
            assert_matches_oracle(idx, corpus, q, 25, metric)

    def test_large_corpus_matches_oracle(self):
        rng = np.random.default_rng(14)
        corpus = (rng.standard_normal((700, 4)) * 100 + 1000).astype(np.float32)
        qs = corpus[:5].astype(np.float64) + rng.standard_normal((5, 4)) * 1e-3
        for metric in Metric:
            idx = KnnIndex(corpus, metric)
            for q in qs:
                assert_matches_oracle(idx, corpus, q, 7, metric)


class TestUnion:
    def test_duplicate_queries_idempotent(self):
        rng = np.random.default_rng(10)
        idx = KnnIndex(rng.standard_normal((50, 4)))
        q = rng.standard_normal(4)
        single = idx.query(q, 3)
        union = idx.query_union([q, q, q], 3)
        assert union.indices.tolist() == single.indices.tolist()
        assert union.scores.tolist() == single.scores.tolist()

    def test_one_query_is_query(self):
        rng = np.random.default_rng(11)
        for metric in Metric:
            idx = KnnIndex(rng.standard_normal((50, 4)), metric)
            q = rng.standard_normal(4)
            assert idx.query_union([q], 5).indices.tolist() == idx.query(q, 5).indices.tolist()

    def test_disjoint_neighborhoods_pick_closer(self):
        corpus = np.array([[0.0, 0.0], [10.0, 0.0]])
        idx = KnnIndex(corpus)
        # first query is 0.5 from row 0, second is 0.2 from row 1
        nn = idx.query_union([[0.5, 0.0], [10.2, 0.0]], 1)
        want = min(brute_force_knn(corpus.tolist(), [0.5, 0.0], 1, "l2")
                   + brute_force_knn(corpus.tolist(), [10.2, 0.0], 1, "l2"), key=lambda t: t[1])
        assert nn.indices.tolist() == [want[0]] == [1]

    def test_union_keeps_best_score(self):
        rng = np.random.default_rng(12)
        corpus = rng.standard_normal((80, 3)).astype(np.float32)
        idx = KnnIndex(corpus)
        qs = rng.standard_normal((3, 3))
        nn = idx.query_union(qs, 6)
        pool = []
        for q in qs:
            pool += brute_force_knn(corpus.tolist(), q.tolist(), 80, "l2")
        best = {}
        for i, s in pool:
            best[i] = min(s, best.get(i, np.inf))
        want = sorted(best.items(), key=lambda t: (t[1], t[0]))[:6]
        assert nn.indices.tolist() == [i for i, _ in want]
        np.testing.assert_allclose(nn.scores, [s for _, s in want], rtol=1e-9)
