import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from emoset.exceptions import ArgumentError, ConvergenceWarning
from emoset.svm import (
    C_GRID,
    PLATT_A_MIN,
    REJECT,
    BinarySvm,
    LinearSVM,
    OneVsAllSVM,
    _inner_folds,
    decide,
    grid_search_C,
    platt_calibrate,
    platt_nll,
    train_binary,
)
from oracles import brute_force_svm_dual


def _blobs(n, sep, seed, d=2):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2 * n, d))
    X[:n, 0] -= sep / 2
    X[n:, 0] += sep / 2
    return X, np.repeat([-1, 1], n)


def _kkt_residual(model, X, y):
    f = y * model.decision_function(X)
    a, C = model.dual_coef_, model.C
    g = f - 1.0
    res = np.where(a <= 0, np.minimum(g, 0.0), np.where(a >= C, np.maximum(g, 0.0), g))
    return np.abs(res).max()


# --------------------------------------------------------------------------
# binary solver


def test_two_point_analytic_solution():
    model = train_binary(np.array([[-1.0], [1.0]]), np.array([-1, 1]), C=100.0)
    assert model.coef_[0] == pytest.approx(1.0, abs=1e-6)
    assert model.intercept_ == pytest.approx(0.0, abs=1e-6)
    np.testing.assert_allclose(model.decision_function(np.array([[-1.0], [1.0]])), [-1.0, 1.0], atol=1e-6)


def test_separable_blobs_have_zero_training_error():
    X, y = _blobs(60, 8.0, 0)
    model = train_binary(X, y, C=1.0)
    assert np.all(model.predict(X) == y)
    assert model.converged_


@pytest.mark.parametrize("seed,C", [(1, 0.5), (2, 4.0), (3, 0.05)])
def test_dual_objective_matches_exhaustive_oracle(seed, C):
    X, y = _blobs(4, 1.0, seed)
    model = LinearSVM(C=C, tol=1e-8, max_iter=100000).fit(X, y)
    obj, alpha = brute_force_svm_dual(X, y, C)
    assert model.dual_objective() == pytest.approx(obj, abs=1e-4)
    np.testing.assert_allclose(model.dual_coef_, alpha, atol=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(C_GRID))
def test_kkt_and_monotone_objective(seed, C):
    X, y = _blobs(20, 1.5, seed, d=3)
    model = LinearSVM(C=C).fit(X, y)
    assert _kkt_residual(model, X, y) < 1e-3
    trace = model.objective_trace_
    assert trace.size >= 1
    assert np.all(np.diff(trace) <= 1e-12 * (1 + np.abs(trace[:-1])))
    assert trace[-1] == pytest.approx(model.dual_objective(), rel=1e-9, abs=1e-12)
    a = model.dual_coef_
    assert np.all((a >= 0) & (a <= C))
    w = np.append(model.coef_, model.intercept_)
    np.testing.assert_allclose(w, np.hstack([X, np.ones((40, 1))]).T @ (a * y), atol=1e-9)


def test_warm_start_reaches_same_solution():
    X, y = _blobs(30, 1.0, 4)
    cold = LinearSVM(C=2.0, tol=1e-6).fit(X, y)
    warm = LinearSVM(C=2.0, tol=1e-6).fit(X, y, alpha_init=LinearSVM(C=1.0).fit(X, y).dual_coef_)
    assert warm.dual_objective() == pytest.approx(cold.dual_objective(), rel=1e-5)


def test_iteration_cap_warns():
    X, y = _blobs(50, 0.2, 5, d=4)
    with pytest.warns(ConvergenceWarning):
        model = LinearSVM(C=32.0, tol=1e-12, max_iter=2).fit(X, y)
    assert not model.converged_
    assert model.n_iter_ <= 2.0 + 1e-9


def test_deterministic_given_seed():
    X, y = _blobs(30, 1.0, 6)
    a = LinearSVM(C=1.0, random_state=3).fit(X, y)
    b = LinearSVM(C=1.0, random_state=3).fit(X, y)
    assert a.coef_.tobytes() == b.coef_.tobytes() and a.intercept_ == b.intercept_


@pytest.mark.parametrize("y", [np.ones(4), np.array([0, 1, 0, 1]), np.array([-1, 1, 2, 1])])
def test_bad_binary_labels(y):
    with pytest.raises(ArgumentError):
        train_binary(np.zeros((4, 2)), y, C=1.0)


def test_nonpositive_C():
    with pytest.raises(ArgumentError):
        train_binary(np.eye(2), [-1, 1], C=0.0)


# --------------------------------------------------------------------------
# Platt scaling


def test_platt_symmetric_margins():
    m = np.array([-1.0] * 10 + [1.0] * 10)
    fit = platt_calibrate(m, np.sign(m))
    assert expit(-fit.b) == pytest.approx(0.5, abs=1e-6)
    assert fit.a < 0


def test_platt_improves_on_flat_model():
    rng = np.random.default_rng(7)
    m = rng.standard_normal(300)
    labels = np.where(rng.random(300) < expit(1.5 * m), 1, -1)
    fit = platt_calibrate(m, labels)
    assert platt_nll(fit.a, fit.b, m, labels) <= platt_nll(0.0, 0.0, m, labels)


def test_platt_recovers_generating_parameters():
    rng = np.random.default_rng(8)
    m = rng.uniform(-3, 3, 2000)
    labels = np.where(rng.random(2000) < expit(-(-2.0 * m + 0.5)), 1, -1)
    fit = platt_calibrate(m, labels)
    assert fit.a == pytest.approx(-2.0, abs=0.2)
    assert fit.b == pytest.approx(0.5, abs=0.2)


def test_platt_clamps_degenerate_fit():
    m = np.array([-1e-3] * 3 + [1e-3] * 3)
    fit = platt_calibrate(m, np.sign(m))
    assert fit.clamped and fit.a == PLATT_A_MIN


def test_platt_needs_both_labels():
    with pytest.raises(ArgumentError):
        platt_calibrate(np.arange(5.0), np.array([1, 1, 1, 1, -1]))


# --------------------------------------------------------------------------
# grid search


def test_single_value_grid():
    X, y = _blobs(20, 1.0, 9)
    assert grid_search_C(X, y, grid=(0.7,)).C == 0.7


def test_separable_picks_smallest_C():
    X, y = _blobs(25, 12.0, 10)
    res = grid_search_C(X, y)
    assert all(s == 1.0 for s in res.scores.values())
    assert res.C == min(C_GRID)


def test_grid_search_matches_exhaustive_evaluation():
    X, y = _blobs(40, 1.0, 11, d=3)
    grid = (2.0 ** -5, 2.0 ** -2, 1.0, 8.0)
    res = grid_search_C(X, y, grid=grid, folds=5, seed=0, tol=1e-8, max_iter=100000)
    fold_id, k = _inner_folds(y, 5, None, 0)
    oracle = {}
    for C in grid:
        accs = []
        for f in range(k):
            tr, te = fold_id != f, fold_id == f
            model = LinearSVM(C=C, tol=1e-8, max_iter=100000).fit(X[tr], y[tr])
            accs.append(np.mean(model.predict(X[te]) == y[te]))
        oracle[C] = np.mean(accs)
    for C in grid:
        assert res.scores[C] == pytest.approx(oracle[C], abs=1e-12)
    best = max(oracle.values())
    assert res.C == min(C for C in grid if oracle[C] == best)


def test_inner_folds_respect_groups():
    y = np.repeat([-1, 1], 30)
    groups = np.repeat(np.arange(30), 2)
    fold_id, k = _inner_folds(y, 5, groups, 0)
    assert k == 5
    for g in range(30):
        assert np.unique(fold_id[groups == g]).size == 1


# --------------------------------------------------------------------------
# decisions


def test_decide_examples():
    assert decide(np.array([0.6, 0.4]), 0.7).tolist() == [REJECT]
    assert decide(np.array([0.6, 0.4]), 0.5).tolist() == [0]
    assert decide(np.array([0.5, 0.5]), 0.0).tolist() == [0]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.integers(1, 20), st.integers(0, 2 ** 31 - 1))
def test_threshold_floor_and_monotone_reject(k, n, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(k), size=n)
    assert np.all(decide(p, 0.0) != REJECT)
    prev = np.zeros(n, dtype=bool)
    for theta in np.linspace(0, 1, 21):
        out = decide(p, theta)
        rej = out == REJECT
        assert np.all(rej >= prev)
        assert np.all(out[~rej] == p[~rej].argmax(axis=1))
        prev = rej


def _three_class(seed=12, n=30):
    rng = np.random.default_rng(seed)
    centres = np.array([[0.0, 4.0], [4.0, -2.0], [-4.0, -2.0]])
    X = np.vstack([rng.standard_normal((n, 2)) * 1.5 + c for c in centres])
    return X, np.repeat(["a", "b", "c"], n)


def test_one_vs_all_probabilities(quiet_convergence):
    X, y = _three_class()
    model = OneVsAllSVM(C_grid=(0.25, 1.0, 4.0)).fit(X, y)
    P = model.predict_proba(X)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(P >= 0)
    assert np.mean(model.predict(X) == y) > 0.9
    for b in model.binaries_:
        assert isinstance(b, BinarySvm) and b.platt_a < 0
    post = model.posterior(X[0], threshold=0.0)
    assert post.label == model.classes_[post.decision] and not post.rejected
    assert model.posterior(X[0], threshold=1.0 + 1e-9).rejected


def test_one_vs_all_respects_class_order(quiet_convergence):
    X, y = _three_class()
    model = OneVsAllSVM(classes=["c", "a", "b"], C_grid=(1.0,)).fit(X, y)
    P = model.predict_proba(X)
    assert model.classes_.tolist() == ["c", "a", "b"]
    assert np.mean(P[y == "c"].argmax(axis=1) == 0) > 0.9


def test_one_vs_all_from_binaries_roundtrip(quiet_convergence):
    X, y = _three_class()
    model = OneVsAllSVM(C_grid=(1.0,)).fit(X, y)
    clone = OneVsAllSVM.from_binaries(model.classes_, model.binaries_)
    np.testing.assert_array_equal(clone.predict_proba(X), model.predict_proba(X))


def test_single_class_rejected():
    with pytest.raises(ArgumentError):
        OneVsAllSVM(C_grid=(1.0,)).fit(np.random.default_rng(0).standard_normal((10, 2)), np.zeros(10))


def test_unknown_label_rejected():
    X, y = _three_class()
    with pytest.raises(ArgumentError):
        OneVsAllSVM(classes=["a", "b"], C_grid=(1.0,)).fit(X, y)


def test_fit_emits_no_spurious_warnings():
    X, y = _three_class()
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        OneVsAllSVM(C_grid=(0.5,)).fit(X, y)
