"""One-against-all linear SVM with Platt-calibrated confidences and a reject option."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import StratifiedKFold
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ArgumentError, ConvergenceWarning

C_GRID = tuple(2.0 ** k for k in range(-5, 6))
REJECT = -1
PLATT_A_MIN = -50.0


@njit(cache=True)
def _dual_cd(X, y, C, alpha, w, seed, max_epochs, tol, trace):
    """L1-loss SVM dual coordinate descent with shrinking (bias folded into X).

    Minimises 0.5 a'Qa - sum(a) over 0 <= a <= C, Q_ij = y_i y_j x_i.x_j,
    starting from the given ``alpha`` (``w`` must equal sum a_i y_i x_i).
    Stops once a sweep over all coordinates finds every projected gradient
    below ``tol``. Writes the dual objective after each sweep into ``trace``
    (until it is full) and returns ``(recorded_sweeps, epochs, violation)``
    where an epoch is ``n`` coordinate visits, so shrunken sweeps count
    fractionally, and ``violation`` is the final projected-gradient maximum
    over all coordinates.
    """
    n, d = X.shape
    qii = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += X[i, j] * X[i, j]
        qii[i] = s
    index = np.arange(n)
    np.random.seed(seed)
    active = n
    pg_max_old = np.inf
    pg_min_old = -np.inf
    visits = 0
    sweep = 0
    while visits < max_epochs * n:
        np.random.shuffle(index[:active])
        pg_max = -np.inf
        pg_min = np.inf
        viol = 0.0
        s = 0
        while s < active:
            i = index[s]
            g = 0.0
            for j in range(d):
                g += w[j] * X[i, j]
            g = y[i] * g - 1.0
            a = alpha[i]
            pg = 0.0
            if a <= 0.0:
                if g > pg_max_old:
                    active -= 1
                    index[s], index[active] = index[active], index[s]
                    continue
                elif g < 0.0:
                    pg = g
            elif a >= C:
                if g < pg_min_old:
                    active -= 1
                    index[s], index[active] = index[active], index[s]
                    continue
                elif g > 0.0:
                    pg = g
            else:
                pg = g
            if pg > pg_max:
                pg_max = pg
            if pg < pg_min:
                pg_min = pg
            if abs(pg) > viol:
                viol = abs(pg)
            if pg != 0.0 and qii[i] > 0.0:
                new = min(max(a - g / qii[i], 0.0), C)
                delta = (new - a) * y[i]
                alpha[i] = new
                for j in range(d):
                    w[j] += delta * X[i, j]
            s += 1
        obj = 0.0
        for j in range(d):
            obj += w[j] * w[j]
        obj *= 0.5
        for i in range(n):
            obj -= alpha[i]
        if sweep < trace.size:
            trace[sweep] = obj
        sweep += 1
        visits += s
        if viol < tol:
            if active == n:
                break
            active = n
            pg_max_old = np.inf
            pg_min_old = -np.inf
            continue
        pg_max_old = pg_max if pg_max > 0.0 else np.inf
        pg_min_old = pg_min if pg_min < 0.0 else -np.inf
    full_viol = 0.0
    for i in range(n):
        g = 0.0
        for j in range(d):
            g += w[j] * X[i, j]
        g = y[i] * g - 1.0
        if alpha[i] <= 0.0:
            g = min(g, 0.0)
        elif alpha[i] >= C:
            g = max(g, 0.0)
        if abs(g) > full_viol:
            full_viol = abs(g)
    return min(sweep, trace.size), visits / n, full_viol


def _augment(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


def _as_pm1(y):
    y = np.asarray(y)
    labels = np.unique(y)
    if labels.size != 2:
        raise ArgumentError("binary SVM needs exactly two classes")
    if set(labels.tolist()) != {-1, 1}:
        raise ArgumentError("binary labels must be -1/+1")
    return y.astype(np.float64)


class LinearSVM(ClassifierMixin, BaseEstimator):
    """Soft-margin linear SVM for -1/+1 labels, solved in the dual.

    The intercept is learned as the weight of a constant feature.

    Parameters
    ----------
    C : float, default=1.0
    tol : float, default=1e-4
        Stop when the largest projected-gradient violation in an epoch is below this.
    max_iter : int, default=10000
        Maximum number of epochs.
    random_state : int, default=0
        Seeds the coordinate order.
    """

    def __init__(self, C=1.0, tol=1e-4, max_iter=10000, random_state=0):
        self.C = C
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y, alpha_init=None):
        """Train on -1/+1 labels; ``alpha_init`` warm-starts the dual (clipped to [0, C])."""
        if self.C <= 0:
            raise ArgumentError("C must be positive")
        X = check_array(X, dtype=np.float64)
        y = _as_pm1(y)
        Xa = np.ascontiguousarray(_augment(X))
        if alpha_init is None:
            alpha = np.zeros(X.shape[0])
        else:
            alpha = np.clip(np.asarray(alpha_init, dtype=np.float64), 0.0, self.C)
        w = Xa.T @ (alpha * y)
        trace = np.empty(int(self.max_iter) * 4)
        sweeps, epochs, viol = _dual_cd(Xa, y, float(self.C), alpha, w, int(self.random_state),
                                int(self.max_iter), float(self.tol), trace)
        self.converged_ = bool(epochs < self.max_iter or viol < self.tol)
        if not self.converged_:
            warnings.warn(f"dual coordinate descent stopped after {epochs:.0f} epochs "
                          f"(violation {viol:.2e})", ConvergenceWarning, stacklevel=2)
        self.coef_ = w[:-1].copy()
        self.intercept_ = float(w[-1])
        self.dual_coef_ = alpha
        self.n_iter_ = float(epochs)
        self.max_violation_ = float(viol)
        self.objective_trace_ = trace[:sweeps].copy()
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def dual_objective(self):
        w = np.append(self.coef_, self.intercept_)
        return 0.5 * float(w @ w) - float(self.dual_coef_.sum())


def train_binary(X, y, C, seed=0, tol=1e-4, max_iter=10000, alpha_init=None) -> LinearSVM:
    return LinearSVM(C=C, tol=tol, max_iter=max_iter, random_state=seed).fit(X, y, alpha_init)


# --------------------------------------------------------------------------
# Platt scaling


@dataclass(frozen=True)
class PlattFit:
    a: float
    b: float
    clamped: bool = False
    iterations: int = 0


def platt_nll(a, b, margins, labels) -> float:
    """Negative log-likelihood of smoothed targets under ``1 / (1 + exp(a m + b))``."""
    m = np.asarray(margins, dtype=np.float64)
    pos = np.asarray(labels) > 0
    n_pos, n_neg = pos.sum(), (~pos).sum()
    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    f = a * m + b
    return float(np.sum(np.where(f >= 0, t * f + np.log1p(np.exp(-np.abs(f))),
                                 (t - 1.0) * f + np.log1p(np.exp(-np.abs(f))))))


def platt_calibrate(margins, labels, max_iter=100, tol=1e-8) -> PlattFit:
    """Fit ``p(y=1 | m) = 1 / (1 + exp(a m + b))`` by damped Newton steps."""
    m = np.asarray(margins, dtype=np.float64)
    pos = np.asarray(labels) > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos < 2 or n_neg < 2:
        raise ArgumentError("Platt scaling needs at least 2 samples of each label")
    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = platt_nll(a, b, m, labels)
    it = 0
    for it in range(1, max_iter + 1):
        f = a * m + b
        p = expit(-f)
        q = 1.0 - p
        d2 = p * q
        h11 = float(np.sum(m * m * d2)) + 1e-12
        h22 = float(np.sum(d2)) + 1e-12
        h21 = float(np.sum(m * d2))
        d1 = t - p
        g1 = float(np.sum(m * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < tol and abs(g2) < tol:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = platt_nll(na, nb, m, labels)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            break
    clamped = a < PLATT_A_MIN
    if clamped:
        a = PLATT_A_MIN
    return PlattFit(float(a), float(b), bool(clamped), it)


def sigmoid_confidence(margins, a, b):
    return expit(-(a * np.asarray(margins, dtype=np.float64) + b))


# --------------------------------------------------------------------------
# Model selection


def _inner_folds(y, folds, groups, seed):
    """Stratified fold ids; all rows sharing a group land in the same fold."""
    y = np.asarray(y)
    groups = np.arange(y.size) if groups is None else np.asarray(groups)
    uniq, first = np.unique(groups, return_index=True)
    gy = y[first]
    _, counts = np.unique(gy, return_counts=True)
    k = int(min(folds, counts.min()))
    if k < 2:
        raise ArgumentError("not enough samples per class for inner cross-validation")
    fold_of_group = np.empty(uniq.size, dtype=np.int64)
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    for f, (_, test) in enumerate(skf.split(np.zeros(uniq.size), gy)):
        fold_of_group[test] = f
    return fold_of_group[np.searchsorted(uniq, groups)], k


@dataclass
class GridSearchResult:
    C: float
    scores: dict
    oof_margins: np.ndarray


def grid_search_C(X, y, grid=C_GRID, folds=5, groups=None, seed=0, tol=1e-4, max_iter=10000) -> GridSearchResult:
    """Pick C by mean inner-fold accuracy, smallest C on ties.

    Also returns the out-of-fold margins of the chosen C, which are held-out
    scores suitable for calibration.
    """
    X = check_array(X, dtype=np.float64)
    y = _as_pm1(y)
    fold_id, k = _inner_folds(y, folds, groups, seed)
    best = None
    scores = {}
    best_margins = None
    warm = [None] * k  # ascending C keeps the previous dual solution feasible
    for C in sorted(grid):
        margins = np.empty(y.size)
        accs = []
        for f in range(k):
            tr, te = fold_id != f, fold_id == f
            if np.unique(y[tr]).size < 2:
                raise ArgumentError("inner training fold lost a class")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                model = train_binary(X[tr], y[tr], C, seed, tol, max_iter, warm[f])
            warm[f] = model.dual_coef_
            margins[te] = model.decision_function(X[te])
            accs.append(np.mean(np.where(margins[te] >= 0, 1.0, -1.0) == y[te]))
        scores[C] = float(np.mean(accs))
        if best is None or scores[C] > scores[best] + 1e-12:
            best = C
            best_margins = margins
    return GridSearchResult(best, scores, best_margins)


# --------------------------------------------------------------------------
# One-against-all


@dataclass(frozen=True)
class BinarySvm:
    weights: np.ndarray
    bias: float
    C: float
    platt_a: float
    platt_b: float
    converged: bool = True
    platt_clamped: bool = False

    def margin(self, X):
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def confidence(self, X):
        return sigmoid_confidence(self.margin(X), self.platt_a, self.platt_b)


@dataclass(frozen=True)
class Posterior:
    probs: np.ndarray
    decision: Optional[int]
    classes: tuple = ()

    @property
    def rejected(self) -> bool:
        return self.decision is None

    @property
    def label(self):
        return None if self.decision is None else self.classes[self.decision]


def decide(probs, threshold: float) -> np.ndarray:
    """Index of the most probable class per row, or ``REJECT`` below ``threshold``.

    Ties resolve to the lowest class index.
    """
    probs = np.atleast_2d(probs)
    idx = probs.argmax(axis=1)
    top = probs[np.arange(probs.shape[0]), idx]
    return np.where(top >= threshold, idx, REJECT)


class OneVsAllSVM(ClassifierMixin, BaseEstimator):
    """One linear SVM per class; Platt confidences normalised across classes.

    Parameters
    ----------
    classes : sequence, optional
        Fixed class order (tie-breaking and probability columns). Defaults to
        sorted unique labels.
    C_grid : tuple of float
        Candidate C values searched independently per class.
    inner_folds : int, default=5
    reject_threshold : float, default=0.0
        Minimum normalised confidence for :meth:`predict_with_reject`.
    tol, max_iter, random_state
        Passed to each :class:`LinearSVM`.
    """

    def __init__(self, classes=None, C_grid=C_GRID, inner_folds=5, reject_threshold=0.0,
                 tol=1e-4, max_iter=10000, random_state=0):
        self.classes = classes
        self.C_grid = C_grid
        self.inner_folds = inner_folds
        self.reject_threshold = reject_threshold
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y, groups=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        self.classes_ = np.asarray(self.classes if self.classes is not None else np.unique(y))
        missing = set(np.unique(y).tolist()) - set(self.classes_.tolist())
        if missing:
            raise ArgumentError(f"labels {sorted(missing)} not among classes")
        binaries = []
        self.grid_scores_ = []
        for label in self.classes_:
            yk = np.where(y == label, 1, -1)
            if np.unique(yk).size < 2:
                raise ArgumentError(f"class {label!r} has no positive or no negative samples")
            search = grid_search_C(X, yk, self.C_grid, self.inner_folds, groups,
                                   self.random_state, self.tol, self.max_iter)
            platt = platt_calibrate(search.oof_margins, yk)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ConvergenceWarning)
                svm = train_binary(X, yk, search.C, self.random_state, self.tol, self.max_iter)
            for w in caught:
                warnings.warn(w.message, w.category, stacklevel=2)
            binaries.append(BinarySvm(svm.coef_, svm.intercept_, search.C, platt.a, platt.b,
                                      svm.converged_, platt.clamped))
            self.grid_scores_.append(search.scores)
        self.binaries_ = binaries
        self.n_features_in_ = X.shape[1]
        return self

    def confidences(self, X):
        """Raw per-class Platt probabilities, shape ``(n, n_classes)``."""
        check_is_fitted(self, "binaries_")
        X = check_array(X, dtype=np.float64)
        return np.column_stack([b.confidence(X) for b in self.binaries_])

    def predict_proba(self, X):
        p = self.confidences(X)
        return p / p.sum(axis=1, keepdims=True)

    def decision_function(self, X):
        check_is_fitted(self, "binaries_")
        X = check_array(X, dtype=np.float64)
        return np.column_stack([b.margin(X) for b in self.binaries_])

    def predict(self, X):
        return self.classes_[decide(self.predict_proba(X), 0.0)]

    def predict_with_reject(self, X, threshold=None) -> np.ndarray:
        """Class indices, ``REJECT`` (-1) where the top normalised confidence is below the threshold."""
        threshold = self.reject_threshold if threshold is None else threshold
        return decide(self.predict_proba(X), threshold)

    def posterior(self, x, threshold=None) -> Posterior:
        threshold = self.reject_threshold if threshold is None else threshold
        probs = self.predict_proba(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
        idx = int(decide(probs, threshold)[0])
        return Posterior(probs, None if idx == REJECT else idx, tuple(self.classes_.tolist()))

    @classmethod
    def from_binaries(cls, classes, binaries, **params) -> "OneVsAllSVM":
        model = cls(classes=list(classes), **params)
        model.classes_ = np.asarray(classes)
        model.binaries_ = list(binaries)
        model.n_features_in_ = binaries[0].weights.size
        return model
