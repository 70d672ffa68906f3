import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from poisoncf.data import generate_synthetic
from poisoncf.metrics import (avg_item_rating, item_choice_t_test, item_popularity,
                              paired_t_test, rmse_unseen)
from poisoncf.ratings import MaliciousMatrix, SparseRatings, sample_support


def t_two_sided_p(t, df):
    """Reference p-value by integrating the Student t density."""
    c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
    tail, _ = integrate.quad(lambda x: c * (1 + x * x / df) ** (-(df + 1) / 2), abs(t), np.inf,
                             epsabs=1e-13, epsrel=1e-12)
    return 2 * tail


class TestRmse:
    def test_examples(self):
        obs = np.zeros((1, 2), bool)
        assert rmse_unseen(np.ones((1, 2)), np.ones((1, 2)), obs) == 0.0
        assert rmse_unseen(np.array([[1.0, 2.0]]), np.array([[0.0, 1.0]]), obs) == 1.0
        obs1 = np.array([[True, False]])
        assert rmse_unseen(np.array([[9.0, 3.0]]), np.zeros((1, 2)), obs1) == 3.0

    @settings(max_examples=30)
    @given(st.integers(0, 2**16))
    def test_permutation_and_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        obs = rng.random((4, 5)) < 0.5
        obs[0, 0] = False
        perm = rng.permutation(20)
        r = rmse_unseen(a, b, obs)
        assert r == pytest.approx(rmse_unseen(b, a, obs), rel=1e-14)
        pa, pb, po = (x.ravel()[perm].reshape(4, 5) for x in (a, b, obs))
        assert r == pytest.approx(rmse_unseen(pa, pb, po), rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            rmse_unseen(np.zeros((1, 2)), np.zeros((1, 2)), np.ones((1, 2), bool))
        with pytest.raises(ValueError):
            rmse_unseen(np.zeros((1, 2)), np.zeros((2, 1)), np.zeros((1, 2), bool))


class TestAvgRating:
    @pytest.mark.parametrize("col,expected", [([0.8, 0.8], 0.8), ([2, -2], 0.0), ([1, 0, 2], 1.0)])
    def test_examples(self, col, expected):
        Mh = np.column_stack([np.zeros(len(col)), col])
        assert avg_item_rating(Mh, 1) == pytest.approx(expected)

    def test_bad_item(self):
        with pytest.raises(IndexError):
            avg_item_rating(np.zeros((2, 2)), 2)


class TestPairedT:
    def test_reference_example(self):
        t, p = paired_t_test([0.1, 0.2, 0.3, 0.4, 0.5], np.zeros(5))
        assert t == pytest.approx(0.3 / (np.std([0.1, 0.2, 0.3, 0.4, 0.5], ddof=1) / math.sqrt(5)))
        assert t == pytest.approx(4.243, abs=1e-3)
        assert p == pytest.approx(0.0132, abs=1e-4)
        assert p == pytest.approx(t_two_sided_p(t, 4), abs=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 40), st.integers(0, 2**16))
    def test_matches_quadrature_and_scipy(self, n, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=n), rng.normal(0.3, size=n)
        t, p = paired_t_test(x, y)
        ref = stats.ttest_rel(x, y)
        assert t == pytest.approx(ref.statistic, rel=1e-10)
        assert p == pytest.approx(t_two_sided_p(t, n - 1), abs=1e-8)

    def test_degenerate(self):
        assert paired_t_test([1.0], [0.0]) == (0.0, 1.0)
        assert paired_t_test([1.0, 1.0, 1.0], [0.0, 0.0, 0.0]) == (0.0, 1.0)


class TestItemChoice:
    def test_identical_choices(self):
        normal = SparseRatings.from_dense(np.ones((5, 4)), np.tile([True, True, True, False], (5, 1)))
        mal = MaliciousMatrix.from_dense(np.ones((3, 4)), np.tile([True, True, True, False], (3, 1)))
        t, p = item_choice_t_test(normal, mal)
        assert p == pytest.approx(1.0)

    def test_uniform_vs_skewed(self):
        normal, _ = generate_synthetic(300, 100, 5, 0.2, 0.0, seed=0, popularity_exponent=1.0)
        counts = normal.col_counts()
        assert counts.max() > 5 * np.median(counts)
        mal = sample_support(10, 100, 10, seed=1)
        t, p = item_choice_t_test(normal, mal)
        assert t < 0 and p < 0.05

    def test_popular_choices_not_flagged(self):
        normal, _ = generate_synthetic(300, 100, 5, 0.2, 0.0, seed=0, popularity_exponent=1.0)
        # malicious profiles copy real normal profiles' item choices
        rows = [normal.row_index[i] for i in range(10)]
        users = np.concatenate([[i] * len(r) for i, r in enumerate(rows)])
        mal = MaliciousMatrix(10, 100, users, np.concatenate(rows), np.ones(len(users)))
        _, p = item_choice_t_test(normal, mal)
        assert p > 0.05

    def test_popularity(self):
        normal = SparseRatings(4, 2, [0, 1, 2], [0, 0, 1], [1.0, 1.0, 1.0])
        np.testing.assert_allclose(item_popularity(normal), [0.5, 0.25])

    def test_item_mismatch(self):
        with pytest.raises(ValueError):
            item_choice_t_test(SparseRatings.empty(2, 3), MaliciousMatrix.empty(1, 4))
