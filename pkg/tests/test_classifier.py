import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import qp_projected_gradient
from sklearn.exceptions import ConvergenceWarning

from fpbalance.classifier import SVC, KernelRows, dual_objective, ovo_vote, rbf, rbf_matrix, scale_gamma, smo
from fpbalance.errors import ConfigurationError, SingleClass


def test_rbf_examples():
    u = np.array([0.3, -1.2, 4.0])
    assert rbf(u, u, 0.7) == 1.0
    assert rbf(u, -u, 0.0) == 1.0
    v = u + np.array([0.5, 0.0, 0.0])
    assert rbf(u, v, 4.0) == pytest.approx(math.exp(-1), rel=1e-15)


def test_rbf_matrix_matches_scalar():
    rng = np.random.default_rng(0)
    A, B = rng.random((5, 7)), rng.random((4, 7))
    K = rbf_matrix(A, B, 0.3)
    for i in range(5):
        for j in range(4):
            assert K[i, j] == pytest.approx(rbf(A[i], B[j], 0.3), rel=1e-12)


def _toy(n=20, seed=0, sep=1.0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 1, (n // 2, 2)), rng.normal(sep, 1, (n - n // 2, 2))])
    y = np.repeat([0, 1], [n // 2, n - n // 2])
    return X, y


def _binary_alpha(model, n):
    pair = model.pairs_[0]
    alpha = np.zeros(n)
    alpha[pair.support] = np.abs(pair.dual_coef)
    return alpha


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_dual_objective_matches_qp_oracle(seed):
    X, y = _toy(20, seed)
    model = SVC().fit(X, y)
    ys = np.where(y == 0, 1.0, -1.0)
    K = rbf_matrix(X, X, model.gamma_)
    alpha = _binary_alpha(model, 20)
    _, best = qp_projected_gradient(K, ys, 1.0)
    assert abs(dual_objective(alpha, ys, K) - best) <= 1e-4
    assert np.all(alpha >= 0) and np.all(alpha <= 1.0)
    assert abs(alpha @ ys) <= 1e-6


def test_agrees_with_reference_library_decisions():
    from sklearn.svm import SVC as Reference

    X, y = _toy(40, 3)
    ours = SVC().fit(X, y).decision_function(X)[:, 0]
    ref = Reference().fit(X, y).decision_function(X)
    # opposite sign convention: our +1 is the lower class
    np.testing.assert_allclose(ours, -ref, atol=5e-3)


def test_two_points():
    X = np.array([[0.0, 0.0], [1.0, 0.5]])
    model = SVC().fit(X, [3, 7])
    assert model.predict(X).tolist() == [3, 7]


def test_separable_fixture_fits_perfectly():
    X, y = _toy(60, 4, sep=8.0)
    assert (SVC().fit(X, y).predict(X) == y).all()


def test_multiclass_pairs_and_feasibility():
    rng = np.random.default_rng(5)
    centres = rng.normal(0, 4, (6, 5))
    y = np.repeat(np.arange(6), 15)
    X = centres[y] + rng.normal(size=(90, 5))
    model = SVC().fit(X, y)
    assert len(model.pairs_) == 15 and model.converged_
    for p in model.pairs_:
        a = np.abs(p.dual_coef)
        assert np.all(a > 0) and np.all(a <= 1.0)
        assert abs(p.dual_coef.sum()) <= 1e-6
    assert (model.predict(X) == y).mean() > 0.9


def test_refit_is_bitwise_identical(tmp_path):
    X, y = _toy(30, 6)
    a, b = SVC().fit(X, y), SVC().fit(X, y)
    assert a.decision_function(X).tobytes() == b.decision_function(X).tobytes()
    a.save(tmp_path / "svm.fpm")
    c = SVC.load(tmp_path / "svm.fpm")
    assert c.decision_function(X).tobytes() == a.decision_function(X).tobytes()
    assert c.get_params() == a.get_params()


def test_errors():
    with pytest.raises(SingleClass):
        SVC().fit(np.random.default_rng(0).random((5, 2)), np.zeros(5))
    with pytest.raises(ConfigurationError):
        SVC().fit(np.ones((4, 3)), [0, 0, 1, 1])
    with pytest.raises(ConfigurationError):
        SVC(C=0).fit(np.eye(2), [0, 1])


def test_scale_gamma():
    X = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert scale_gamma(X) == 1 / (2 * 1.0)


def test_iteration_cap_sets_flag():
    X, y = _toy(40, 7, sep=0.5)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = SVC(max_iter=2).fit(X, y)
    assert not model.converged_
    assert any(issubclass(w.category, ConvergenceWarning) for w in caught)
    assert model.predict(X).shape == (40,)


def test_unanimous_vote():
    pairs = [(a, b) for a in range(6) for b in range(a + 1, 6)]
    dec = np.array([[1.0 if a == 2 else (-1.0 if b == 2 else 0.3) for a, b in pairs]])
    assert ovo_vote(dec, pairs, 6).tolist() == [2]


def test_three_way_tie_hand_fixture():
    # pairs (0,1), (0,2), (1,2): each class wins exactly once.
    pairs = [(0, 1), (0, 2), (1, 2)]
    dec = np.array([[0.4, -0.9, 0.2]])
    # class 0 wins (0,1) by 0.4; class 2 wins (0,2) by 0.9; class 1 wins (1,2) by 0.2
    assert ovo_vote(dec, pairs, 3).tolist() == [2]
    # equal magnitudes fall back to the lowest index
    assert ovo_vote(np.array([[0.5, -0.5, 0.5]]), pairs, 3).tolist() == [0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=15, max_size=15))
def test_vote_winner_has_most_votes(dec):
    pairs = [(a, b) for a in range(6) for b in range(a + 1, 6)]
    dec = np.array([dec])
    winner = ovo_vote(dec, pairs, 6)[0]
    votes = np.zeros(6)
    for p, (a, b) in enumerate(pairs):
        votes[a if dec[0, p] > 0 else b] += 1
    assert votes[winner] == votes.max()
    assert (ovo_vote(dec, pairs, 6) == winner).all()


def test_kernel_row_cache_is_bounded():
    rng = np.random.default_rng(8)
    X = rng.random((50, 3))
    rows = KernelRows(X, 0.5, cache_mb=8 * 50 * 3 / 2**20)
    assert rows.capacity == 3
    for i in range(10):
        np.testing.assert_allclose(rows[i], rbf_matrix(X[i : i + 1], X, 0.5)[0], rtol=1e-12)
    assert len(rows._rows) == 3


def test_smo_binary_kkt():
    X, y = _toy(30, 9, sep=1.5)
    ys = np.where(y == 0, 1.0, -1.0)
    res = smo(KernelRows(X, 0.5), ys, C=1.0, tol=1e-6)
    assert res.converged
    K = rbf_matrix(X, X, 0.5)
    f = (res.alpha * ys) @ K - res.rho
    margin = ys * f
    free = (res.alpha > 1e-8) & (res.alpha < 1 - 1e-8)
    np.testing.assert_allclose(margin[free], 1.0, atol=1e-4)
    assert np.all(margin[res.alpha < 1e-12] >= 1 - 1e-4)
    assert np.all(margin[res.alpha > 1 - 1e-12] <= 1 + 1e-4)
