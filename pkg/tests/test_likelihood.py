import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import onecomp_subjects
from npsa.likelihood import (
    CellEvaluator,
    LikelihoodMatrix,
    build_matrix,
    individual_prediction,
    log_likelihood,
    partition_cells,
    population_prediction,
    posterior_weights,
    replace_column,
)
from npsa.models import get_model, onecomp_predict, wang_likelihood
from npsa.types import Candidate, DiscreteDistribution, Subject

positive_matrix = hnp.arrays(
    float, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(1e-6, 10.0)
)


def cand(points, weights=None, beta=()):
    points = np.atleast_2d(points)
    if weights is None:
        weights = np.full(len(points), 1.0 / len(points))
    return Candidate(DiscreteDistribution(points, weights), np.asarray(beta, dtype=float))


def test_partition_blocks_differ_by_at_most_one():
    for count in range(0, 40):
        for workers in range(1, 9):
            blocks = partition_cells(count, workers)
            sizes = [b - a for a, b in blocks]
            assert sum(sizes) == count
            if sizes:
                assert max(sizes) - min(sizes) <= 1
            assert all(blocks[i][1] == blocks[i + 1][0] for i in range(len(blocks) - 1))


def test_single_wang_cell():
    s = Subject("w", [1.0], [2], aux={"n_trials": [3], "x": [1.0]})
    m = build_matrix(get_model("wang"), [s], cand([[1.0]], beta=[0.97007]))
    assert m.values.shape == (1, 1)
    assert m.values[0, 0] == pytest.approx(wang_likelihood(2, 3, 1.0, 0.97007, 1.0), rel=1e-13)


def test_duplicate_points_give_identical_columns():
    subjects = onecomp_subjects([(0.5, 1.0), (1.5, 1.2)], noise=0.5)
    m = build_matrix(get_model("onecomp"), subjects, cand([[0.7, 1.0], [0.7, 1.0]]))
    np.testing.assert_array_equal(m.values[:, 0], m.values[:, 1])


def test_worker_count_does_not_change_matrix():
    rng = np.random.default_rng(4)
    subjects = onecomp_subjects(rng.uniform([0.3, 0.8], [1.7, 1.3], (5, 2)), noise=0.5)
    c = cand(rng.uniform([0.3, 0.8], [1.7, 1.3], (5, 2)))
    model = get_model("onecomp")
    a = build_matrix(model, subjects, c, workers=1)
    b = build_matrix(model, subjects, c, workers=7)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.row_mix.tobytes() == b.row_mix.tobytes()


def test_row_mix_cache():
    m = LikelihoodMatrix([[1.0, 3.0], [2.0, 2.0]], [0.25, 0.75])
    np.testing.assert_allclose(m.row_mix, [2.5, 2.0], rtol=1e-12)


def test_rejects_negative_values():
    with pytest.raises(ValueError):
        LikelihoodMatrix([[-1.0]], [1.0])


class TestLogLikelihood:
    def test_single_cell(self):
        v = log_likelihood(LikelihoodMatrix([[math.exp(-2)]], [1.0]))
        assert v.loglik == pytest.approx(-2.0, abs=1e-15)
        assert v.energy == pytest.approx(2.0, abs=1e-15)
        assert v.energy == -v.loglik / v.n

    def test_hand_arithmetic(self):
        v = log_likelihood(LikelihoodMatrix([[1.0, 3.0], [2.0, 2.0]], [0.5, 0.5]))
        assert v.loglik == pytest.approx(2 * math.log(2), rel=1e-15)

    def test_zero_row_is_minus_inf(self):
        v = log_likelihood(LikelihoodMatrix([[0.0, 0.0], [2.0, 2.0]], [0.5, 0.5]))
        assert v.loglik == -math.inf and not v.feasible

    @given(positive_matrix, st.data())
    def test_permutation_invariance(self, values, data):
        K = values.shape[1]
        w = np.asarray(data.draw(hnp.arrays(float, K, elements=st.floats(0.01, 1.0))))
        w /= w.sum()
        perm = np.asarray(data.draw(st.permutations(range(K))))
        a = log_likelihood(LikelihoodMatrix(values, w)).loglik
        b = log_likelihood(LikelihoodMatrix(values[:, perm], w[perm])).loglik
        assert b == pytest.approx(a, rel=1e-12, abs=1e-12)

    @given(positive_matrix, st.floats(0.0, 1.0))
    def test_split_duplicate_point(self, values, frac):
        K = values.shape[1]
        w = np.full(K, 1.0 / K)
        a = log_likelihood(LikelihoodMatrix(values, w)).loglik
        v2 = np.hstack([values, values[:, :1]])
        w2 = np.append(w, w[0] * (1 - frac))
        w2[0] *= frac
        b = log_likelihood(LikelihoodMatrix(v2, w2)).loglik
        assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


class TestReplaceColumn:
    def test_identity(self):
        m = LikelihoodMatrix([[1.0, 3.0], [2.0, 2.0]], [0.3, 0.7])
        r = replace_column(m, 1, m.values[:, 1].copy())
        assert r.values.tobytes() == m.values.tobytes()
        assert r.row_mix.tobytes() == m.row_mix.tobytes()

    def test_hand_arithmetic(self):
        m = LikelihoodMatrix([[1.0, 3.0], [2.0, 2.0]], [0.5, 0.5])
        r = replace_column(m, 1, [5.0, 0.0])
        np.testing.assert_array_equal(r.values, [[1.0, 5.0], [2.0, 0.0]])
        np.testing.assert_allclose(r.row_mix, [3.0, 1.0], rtol=1e-15)
        np.testing.assert_array_equal(m.values, [[1.0, 3.0], [2.0, 2.0]])

    def test_undo_restores_bitwise(self):
        rng = np.random.default_rng(0)
        m = LikelihoodMatrix(rng.random((6, 4)), np.full(4, 0.25))
        old = m.values[:, 2].copy()
        back = replace_column(replace_column(m, 2, rng.random(6)), 2, old)
        assert back.row_mix.tobytes() == m.row_mix.tobytes()

    def test_out_of_range(self):
        m = LikelihoodMatrix([[1.0]], [1.0])
        with pytest.raises(IndexError):
            replace_column(m, 1, [1.0])


class TestPredictions:
    model = get_model("onecomp")
    subject = onecomp_subjects([(0.8, 1.1)], noise=0.5, seed=2)[0]

    def test_single_support(self):
        d = DiscreteDistribution([[0.6, 0.9]], [1.0])
        expected = onecomp_predict(0.6, 0.9, self.subject.times)
        np.testing.assert_allclose(population_prediction(self.model, self.subject, d), expected, rtol=1e-14)
        np.testing.assert_allclose(individual_prediction(self.model, self.subject, d), expected, rtol=1e-14)

    def test_midpoint(self):
        s = Subject("a", [0.0], [0.0])
        d = DiscreteDistribution([[0.0, 2.0], [0.0, 1.0]], [0.5, 0.5])
        assert population_prediction(self.model, s, d)[0] == pytest.approx(15.0)

    def test_three_supports_direct_sum(self):
        pts = np.array([[0.5, 1.0], [1.0, 1.5], [1.5, 0.8]])
        w = np.array([0.2, 0.5, 0.3])
        d = DiscreteDistribution(pts, w)
        ref = sum(wk * onecomp_predict(K, V, self.subject.times) for wk, (K, V) in zip(w, pts))
        np.testing.assert_allclose(population_prediction(self.model, self.subject, d), ref, rtol=1e-13)

    def test_flat_likelihood_gives_population(self):
        # K enters only through exp(-K t) at t = 0, so both points fit equally
        s = Subject("a", [0.0], [15.0])
        d = DiscreteDistribution([[0.2, 1.0], [2.0, 1.0]], [0.3, 0.7])
        np.testing.assert_allclose(
            individual_prediction(self.model, s, d), population_prediction(self.model, s, d), rtol=1e-14
        )

    def test_dominant_likelihood(self):
        s = self.subject
        good, bad = np.array([0.8, 1.1]), np.array([0.8, 0.6])
        d = DiscreteDistribution([good, bad], [0.5, 0.5])
        post = posterior_weights(self.model, s, d)
        ind = individual_prediction(self.model, s, d)
        y1, y2 = onecomp_predict(*good, s.times), onecomp_predict(*bad, s.times)
        np.testing.assert_allclose(ind, post[0] * y1 + post[1] * y2, rtol=1e-12)
        ll1 = self.model.subject_loglik(s, good)
        ll2 = self.model.subject_loglik(s, bad)
        assert ll1 - ll2 > math.log(1e12)
        np.testing.assert_allclose(ind, y1, rtol=1e-9)

    def test_zero_likelihood_raises(self):
        # negative Vc0 is a failed model cell, so the subject has no mass anywhere
        s = Subject("z", [1.0], [1.0], covariates={"wt": 1.0})
        d = DiscreteDistribution([[1.0, 0.0, 1.0, -1.0, 0.5, 0.0, 0.0]], [1.0])
        with pytest.raises(ValueError, match="zero likelihood under distribution"):
            posterior_weights(get_model("voriconazole"), s, d)


@settings(max_examples=30)
@given(st.integers(1, 8), st.integers(1, 8))
def test_evaluator_columns_layout(n, K):
    rng = np.random.default_rng(n * 10 + K)
    subjects = onecomp_subjects(rng.uniform([0.3, 0.8], [1.7, 1.3], (n, 2)), noise=0.5)
    pts = rng.uniform([0.3, 0.8], [1.7, 1.3], (K, 2))
    model = get_model("onecomp")
    with CellEvaluator(model, subjects) as ev:
        values, _ = ev.columns(pts)
        assert ev.n_evals == n * K
    for i in range(n):
        for k in range(K):
            assert values[i, k] == pytest.approx(math.exp(model.subject_loglik(subjects[i], pts[k])), rel=1e-12)
