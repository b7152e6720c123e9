import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lasenn.combiner import LasennConfig
from lasenn.diagnostics import (avg_l2, class_means, density_report, pearson, project,
                                projection_histogram, pureness)
from lasenn.knn_index import KnnIndex, Metric, NeighborSet
from lasenn.tensor_io import LabeledCorpus, LabelVector
from oracles import pearson_textbook


def nset(idx):
    return NeighborSet(np.asarray(idx), np.zeros(len(idx)), Metric.SQUARED_L2)


class TestPureness:
    labels = LabelVector([0, 0, 1, 0, 2], 3)

    @pytest.mark.parametrize("idx,q,want", [([0, 1, 3], 0, 3), ([0, 1, 3], 2, 0), ([0, 2, 3], 0, 2)])
    def test_counts(self, idx, q, want):
        assert pureness(nset(idx), self.labels, q) == want

    def test_empty(self):
        with pytest.raises(ValueError):
            pureness(nset([]), self.labels, 0)


class TestAvgL2:
    def test_zero_distance(self):
        assert avg_l2(nset([0]), [[1.0, 2.0]], [1.0, 2.0]) == 0.0

    def test_mean_of_true_distances(self):
        # distances 1 and 3, not their squares
        assert avg_l2(nset([0, 1]), [[1.0, 0.0], [0.0, 3.0]], [0.0, 0.0]) == 2.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(0)
        emb = rng.standard_normal((10, 4))
        q = rng.standard_normal(4)
        want = sum(math.sqrt(sum((a - b) ** 2 for a, b in zip(emb[i], q))) for i in (2, 5, 7)) / 3
        assert avg_l2(nset([2, 5, 7]), emb, q) == pytest.approx(want, abs=1e-9)


class TestPearson:
    def test_five_points_textbook(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0]
        y = [2.0, 1.0, 4.0, 3.0, 7.0]
        r, p = pearson(x, y)
        assert r == pytest.approx(pearson_textbook(x, y), abs=1e-9)
        ref = stats.pearsonr(x, y)
        assert p == pytest.approx(ref[1], rel=1e-9)

    def test_constant_series_is_nan(self):
        r, p = pearson([1, 1, 1, 1], [1, 2, 3, 4])
        assert math.isnan(r) and math.isnan(p)

    def test_too_short(self):
        with pytest.raises(ValueError):
            pearson([1, 2], [2, 1])

    def test_perfect(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == (1.0, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.01, 100), st.floats(-100, 100))
    def test_symmetric_and_affine_invariant(self, seed, scale, shift):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((2, 20))
        r, p = pearson(x, y)
        assert pearson(y, x)[0] == pytest.approx(r, abs=1e-12)
        r2, p2 = pearson(x * scale + shift, y)
        assert r2 == pytest.approx(r, abs=1e-9)
        assert p2 == pytest.approx(p, rel=1e-6, abs=1e-12)
        assert -1 <= r <= 1 and 0 <= p <= 1


def tiny_setup(rng, n=30, dims=3):
    emb = rng.standard_normal((n, dims)).astype(np.float32)
    labels = LabelVector(rng.integers(0, 3, n), 3)
    logits = rng.dirichlet(np.ones(3), n).astype(np.float32)
    return LabeledCorpus(emb, logits, labels)


class TestDensityReport:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        corpus = tiny_setup(rng)
        index = KnnIndex(corpus.embeddings)
        q = rng.standard_normal((20, 3))
        ql = rng.dirichlet(np.ones(3), 20)
        y = rng.integers(0, 3, 20)
        cfg = LasennConfig(w_q=0.6)
        rep = density_report(corpus, index, q, ql, y, cfg)
        P, A, native_ok, changed = [], [], [], []
        for i in range(20):
            nn = index.query(q[i], 3)
            P.append(pureness(nn, corpus.labels, y[i]))
            A.append(avg_l2(nn, corpus.embeddings, q[i]))
            comb = 0.6 * ql[i] + 0.4 * corpus.logits[nn.indices].astype(np.float64).mean(axis=0)
            native_ok.append(np.argmax(ql[i]) == y[i])
            changed.append(np.argmax(comb) != np.argmax(ql[i]))
        A = np.array(A)
        assert rep.corr_P_avgL2 == pytest.approx(pearson_textbook(P, A.tolist()), abs=1e-9)
        assert rep.avgL2_all == pytest.approx(A.mean(), abs=1e-9)
        assert rep.avgL2_corr == pytest.approx(A[np.array(native_ok)].mean(), abs=1e-9)
        assert rep.avgL2_wrong == pytest.approx(A[~np.array(native_ok)].mean(), abs=1e-9)
        assert rep.same_pred == pytest.approx(1 - np.mean(changed))
        if any(changed):
            assert rep.avgL2_change == pytest.approx(A[np.array(changed)].mean(), abs=1e-9)

    def test_queries_on_corpus_points(self):
        emb = np.array([[0, 0], [0, 0.1], [0.1, 0], [5, 5], [5, 5.1], [5.1, 5]], dtype=np.float32)
        logits = np.array([[1, 0]] * 3 + [[0, 1]] * 3, dtype=np.float32)
        corpus = LabeledCorpus(emb, logits, LabelVector([0, 0, 0, 1, 1, 1], 2))
        rep = density_report(corpus, KnnIndex(emb), emb, logits, corpus.labels, LasennConfig())
        assert rep.same_pred == 1.0
        # every pureness is 3: correlation undefined and flagged
        assert rep.degenerate and math.isnan(rep.corr_P_avgL2)
        assert math.isnan(rep.avgL2_wrong) and math.isnan(rep.avgL2_change)
        csv_text = rep.to_csv()
        assert csv_text.splitlines()[0] == "metric,value"
        assert "corr_P_avgL2,NA" in csv_text

    def test_needs_three_points(self):
        rng = np.random.default_rng(2)
        corpus = tiny_setup(rng)
        with pytest.raises(ValueError):
            density_report(corpus, KnnIndex(corpus.embeddings), np.zeros((2, 3)),
                           np.full((2, 3), 1 / 3), [0, 1], LasennConfig())


class TestProjection:
    def two_gaussians(self, seed=3, n=400):
        rng = np.random.default_rng(seed)
        mu_a, mu_b, mu_c = np.zeros(4), np.array([4.0, 0, 0, 0]), np.array([0, 0, 20.0, 0])
        emb = np.concatenate([rng.standard_normal((n, 4)) * 0.5 + m for m in (mu_a, mu_b, mu_c)])
        labels = np.repeat([0, 1, 2], n)
        return emb, labels

    def test_means_project_to_zero_and_gap(self):
        mu_a, mu_b = np.array([1.0, 1.0]), np.array([4.0, 5.0])
        assert project([mu_a, mu_b], mu_a, mu_b).tolist() == pytest.approx([0.0, 5.0])

    def test_nearest_mean_and_counts(self):
        emb, labels = self.two_gaussians()
        native = labels.copy()
        lasenn = labels.copy()
        lasenn[[5, 405, 900]] = 9
        h = projection_histogram(emb, labels, native, lasenn, class_a=0, bins=40)
        assert h.class_b == 1
        assert h.mean_gap == pytest.approx(np.linalg.norm(class_means(emb, labels)[1] - class_means(emb, labels)[0]))
        assert len(h.counts_a) == 40 and np.all(np.diff(h.bin_edges) > 0)
        assert h.counts_a.sum() == 400 and h.counts_b.sum() == 400
        # sample 900 belongs to class 2, outside the projected pair
        assert h.counts_changed.sum() == 2
        centers = 0.5 * (h.bin_edges[:-1] + h.bin_edges[1:])
        assert abs(centers[np.argmax(h.counts_a)]) < 0.5
        assert abs(centers[np.argmax(h.counts_b)] - h.mean_gap) < 0.5

    def test_csv_and_svg(self):
        emb, labels = self.two_gaussians(n=50)
        h = projection_histogram(emb, labels, labels, labels, 1, bins=5)
        lines = h.to_csv().splitlines()
        assert lines[0] == "bin_lo,bin_hi,count_a,count_b,count_changed"
        assert len(lines) == 6
        svg = h.to_svg()
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")

    def test_identical_means_rejected(self):
        emb = np.array([[0.0, 1.0], [0.0, -1.0], [1.0, 0.0], [-1.0, 0.0]])
        with pytest.raises(ValueError):
            projection_histogram(emb, [0, 0, 1, 1], [0] * 4, [0] * 4, 0)

    def test_missing_class(self):
        with pytest.raises(ValueError):
            projection_histogram(np.eye(2), [0, 1], [0, 1], [0, 1], 5)
