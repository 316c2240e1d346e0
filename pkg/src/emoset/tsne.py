"""Exact (O(n^2)) t-SNE for 2-D feature-space diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_random_state

from .exceptions import ArgumentError, NumericalError

_BISECTION_STEPS = 50
_ENTROPY_TOL = 1e-5
_DUP_JITTER = 1e-9


@dataclass(frozen=True)
class Embedding2D:
    points: np.ndarray
    labels: Optional[Sequence] = None
    final_kl: float = 0.0


def _sq_distances(X):
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def jitter_duplicates(X, random_state=None):
    """Perturb every repeated row (all but the first copy) by N(0, 1e-9)."""
    X = np.array(X, dtype=np.float64)
    _, first = np.unique(X, axis=0, return_index=True)
    dup = np.ones(X.shape[0], dtype=bool)
    dup[first] = False
    if dup.any():
        rng = check_random_state(random_state)
        X[dup] += rng.normal(0.0, _DUP_JITTER, size=(int(dup.sum()), X.shape[1]))
    return X


def conditional_affinities(D, perplexity: float):
    """Row-wise Gaussian conditionals P_{j|i} with entropy log(perplexity).

    ``D`` holds squared distances. Returns ``(P_cond, betas)``.
    """
    n = D.shape[0]
    target = np.log(perplexity)
    off = ~np.eye(n, dtype=bool)
    Dn = D[off].reshape(n, n - 1)
    Dn = Dn - Dn.min(axis=1, keepdims=True)
    beta = np.ones(n)
    lo = np.full(n, 0.0)
    hi = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    for _ in range(_BISECTION_STEPS):
        W = np.exp(-Dn * beta[:, None])
        S = W.sum(axis=1)
        H = np.log(S) + beta * (Dn * W).sum(axis=1) / S
        diff = H - target
        done |= np.abs(diff) < _ENTROPY_TOL
        if done.all():
            break
        active = ~done
        up = active & (diff > 0)  # entropy too high -> sharpen
        down = active & (diff <= 0)
        lo = np.where(up, beta, lo)
        hi = np.where(down, beta, hi)
        beta = np.where(up, np.where(np.isinf(hi), beta * 2.0, 0.5 * (beta + hi)), beta)
        beta = np.where(down, 0.5 * (beta + lo), beta)
    W = np.exp(-Dn * beta[:, None])
    Pn = W / W.sum(axis=1, keepdims=True)
    P = np.zeros((n, n))
    P[off] = Pn.reshape(-1)
    return P, beta


def perplexity_affinities(X, perplexity: float = 30.0, random_state=0) -> np.ndarray:
    """Symmetric joint affinities ``(P_{j|i} + P_{i|j}) / 2n`` summing to 1."""
    X = check_array(X, dtype=np.float64)
    n = X.shape[0]
    if n < 4:
        raise ArgumentError("t-SNE needs at least 4 points")
    if not 0 < perplexity < (n - 1) / 3.0:
        raise ArgumentError(f"perplexity {perplexity} infeasible for n={n}; must be < {(n - 1) / 3:.2f}")
    X = jitter_duplicates(X, random_state)
    P, _ = conditional_affinities(_sq_distances(X), perplexity)
    P = (P + P.T) / (2.0 * n)
    return P


def kl_gradient(P, Y, exaggeration=1.0):
    """KL(P || Q) for Student-t Q at embedding ``Y`` and its gradient.

    With ``exaggeration`` the gradient is taken against ``exaggeration * P``;
    the returned KL always uses the plain ``P``.
    """
    num = 1.0 / (1.0 + _sq_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    mask = P > 0
    kl = float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))))
    W = (exaggeration * P - Q) * num
    grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
    return kl, grad


def _pca_init(X, n_components, scale=1e-4):
    Xc = X - X.mean(axis=0)
    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    Y = U[:, :n_components] * S[:n_components]
    pivot = np.abs(Vt[:n_components]).argmax(axis=1)
    signs = np.sign(Vt[np.arange(n_components), pivot])
    signs[signs == 0] = 1.0
    Y = Y * signs
    std = Y[:, 0].std()
    return Y / (std if std > 0 else 1.0) * scale


class ExactTSNE(BaseEstimator):
    """Exact t-SNE with early exaggeration, momentum and adaptive gains.

    Parameters
    ----------
    perplexity : float, default=30
    n_iter : int, default=1000
    learning_rate : float, default=200
    early_exaggeration : float, default=12
    exaggeration_iter : int, default=250
        Iterations run with exaggerated affinities and momentum 0.5; later
        iterations use momentum 0.8.
    init : {"pca", "random"}
    random_state : int
    """

    def __init__(self, perplexity=30.0, n_iter=1000, learning_rate=200.0, early_exaggeration=12.0,
                 exaggeration_iter=250, init="pca", random_state=0):
        self.perplexity = perplexity
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.early_exaggeration = early_exaggeration
        self.exaggeration_iter = exaggeration_iter
        self.init = init
        self.random_state = random_state

    def _validate(self):
        for name in ("perplexity", "n_iter", "learning_rate", "early_exaggeration"):
            if getattr(self, name) <= 0:
                raise ArgumentError(f"{name} must be positive")

    def fit(self, X, y=None):
        self._validate()
        X = check_array(X, dtype=np.float64)
        P = perplexity_affinities(X, self.perplexity, self.random_state)
        n = X.shape[0]
        if self.init == "pca":
            Y = _pca_init(jitter_duplicates(X, self.random_state), 2)
        elif self.init == "random":
            Y = check_random_state(self.random_state).normal(0.0, 1e-4, size=(n, 2))
        else:
            raise ArgumentError(f"unknown init {self.init!r}")

        update = np.zeros_like(Y)
        gains = np.ones_like(Y)
        history = np.empty(self.n_iter)
        for it in range(self.n_iter):
            exaggerate = it < self.exaggeration_iter
            kl, grad = kl_gradient(P, Y, self.early_exaggeration if exaggerate else 1.0)
            if not (np.isfinite(kl) and np.all(np.isfinite(grad))):
                raise NumericalError(f"t-SNE diverged at iteration {it}", iteration=it)
            history[it] = kl
            momentum = 0.5 if exaggerate else 0.8
            same = np.sign(grad) == np.sign(update)
            gains = np.maximum(np.where(same, gains * 0.8, gains + 0.2), 0.01)
            update = momentum * update - self.learning_rate * gains * grad
            Y = Y + update
            Y = Y - Y.mean(axis=0)

        kl, _ = kl_gradient(P, Y)
        if not np.isfinite(kl):
            raise NumericalError("t-SNE produced a non-finite KL", iteration=self.n_iter)
        self.affinities_ = P
        self.embedding_ = Y
        self.kl_divergence_ = kl
        self.kl_history_ = np.append(history, kl)
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X, y).embedding_


def tsne_embed(X, labels=None, **params) -> Embedding2D:
    model = ExactTSNE(**params).fit(X)
    return Embedding2D(model.embedding_, labels, model.kl_divergence_)


def write_tsne_csv(path, embedding: Embedding2D, metas) -> None:
    """Rows of ``x,y,emotion,speaker,corpus``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "emotion", "speaker", "corpus"])
        for (x, y), meta in zip(embedding.points, metas):
            writer.writerow([repr(float(x)), repr(float(y)), meta.emotion, meta.speaker_id, meta.corpus_id])
