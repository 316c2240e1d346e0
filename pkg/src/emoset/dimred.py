"""Feature standardisation and per-subset PCA fused to a 100-dim vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ArgumentError
from .functionals import LAYOUT

DEFAULT_COMPONENTS = (90, 8, 2)
_ZERO_VAR_RTOL = 1e-10


def _stats(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)  # population (n) denominator
    zero = std <= _ZERO_VAR_RTOL * np.maximum(1.0, np.abs(mean))
    return mean, np.where(zero, 1.0, std), zero


class FeatureNormalizer(TransformerMixin, BaseEstimator):
    """Z-score features globally or per speaker.

    Zero-variance features map to 0. In ``per_speaker`` mode each row is
    standardised with its own speaker's statistics; speakers unseen during
    fit fall back to the global statistics.

    Parameters
    ----------
    mode : {"global", "per_speaker"}
    """

    def __init__(self, mode="global"):
        self.mode = mode

    def fit(self, X, y=None, speakers=None):
        if self.mode not in ("global", "per_speaker"):
            raise ArgumentError(f"unknown normalizer mode {self.mode!r}")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ArgumentError("normalizer needs a matrix with at least 2 rows")
        X = check_array(X)
        self.n_features_in_ = X.shape[1]
        self.mean_, self.scale_, self.zero_variance_ = _stats(X)
        self.speaker_stats_ = {}
        if self.mode == "per_speaker":
            if speakers is None:
                raise ArgumentError("per_speaker mode needs speaker ids")
            speakers = np.asarray(speakers)
            for spk in np.unique(speakers):
                rows = X[speakers == spk]
                if rows.shape[0] >= 2:
                    self.speaker_stats_[spk.item()] = _stats(rows)
        return self

    def transform(self, X, speakers=None):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ArgumentError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if self.mode == "global" or not self.speaker_stats_:
            return np.where(self.zero_variance_, 0.0, (X - self.mean_) / self.scale_)
        if speakers is None:
            raise ArgumentError("per_speaker mode needs speaker ids")
        speakers = np.asarray(speakers)
        out = np.empty_like(X)
        for i, spk in enumerate(speakers):
            mean, scale, zero = self.speaker_stats_.get(spk.item(), (self.mean_, self.scale_, self.zero_variance_))
            out[i] = np.where(zero, 0.0, (X[i] - mean) / scale)
        return out

    def fit_transform(self, X, y=None, speakers=None):
        return self.fit(X, y, speakers=speakers).transform(X, speakers=speakers)


@dataclass(frozen=True)
class SubsetProjection:
    start: int
    center: np.ndarray
    components: np.ndarray  # d_sub x k, orthonormal columns
    eigenvalues: np.ndarray
    total_variance: float

    @property
    def stop(self) -> int:
        return self.start + self.center.size

    @property
    def captured_variance(self) -> float:
        if self.total_variance <= 0:
            return 1.0
        return float(self.eigenvalues.sum() / self.total_variance)


def fit_pca(X, k: int, start: int = 0) -> SubsetProjection:
    """Top-``k`` eigenvectors of the (population) covariance of ``X``.

    Each eigenvector is signed so its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise ArgumentError("PCA needs at least 2 rows")
    if not 1 <= k <= min(n - 1, d):
        raise ArgumentError(f"k={k} outside [1, {min(n - 1, d)}]")
    center = X.mean(axis=0)
    Xc = X - center
    cov = (Xc.T @ Xc) / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    pivot = np.abs(evecs).argmax(axis=0)
    signs = np.sign(evecs[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    evecs = evecs * signs
    return SubsetProjection(start, center, evecs, evals, float(np.trace(cov)))


class SubsetPCA(TransformerMixin, BaseEstimator):
    """Separate PCA per feature subset, projections concatenated in subset order.

    Parameters
    ----------
    n_components : tuple of int
        Components kept per subset (default ``(90, 8, 2)``).
    subsets : tuple of (start, stop)
        Column ranges; defaults to the 1428/152/2 feature layout.
    mode : {"subset", "joint"}
        ``joint`` runs one PCA over all columns keeping ``sum(n_components)``.
    """

    def __init__(self, n_components=DEFAULT_COMPONENTS, subsets=LAYOUT.ranges, mode="subset"):
        self.n_components = n_components
        self.subsets = subsets
        self.mode = mode

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.mode == "subset":
            if len(self.n_components) != len(self.subsets):
                raise ArgumentError("one component count per subset is required")
            if self.subsets[-1][1] != X.shape[1]:
                raise ArgumentError(f"subsets cover {self.subsets[-1][1]} columns, X has {X.shape[1]}")
            self.projections_ = [fit_pca(X[:, a:b], k, a) for (a, b), k in zip(self.subsets, self.n_components)]
        elif self.mode == "joint":
            self.projections_ = [fit_pca(X, int(sum(self.n_components)), 0)]
        else:
            raise ArgumentError(f"unknown PCA mode {self.mode!r}")
        self.n_features_in_ = X.shape[1]
        self.n_components_ = sum(p.components.shape[1] for p in self.projections_)
        return self

    def transform(self, X):
        check_is_fitted(self, "projections_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ArgumentError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.hstack([(X[:, p.start:p.stop] - p.center) @ p.components for p in self.projections_])

    def inverse_transform(self, Z):
        check_is_fitted(self, "projections_")
        Z = np.asarray(Z, dtype=np.float64)
        out = np.empty((Z.shape[0], self.n_features_in_))
        col = 0
        for p in self.projections_:
            k = p.components.shape[1]
            out[:, p.start:p.stop] = Z[:, col:col + k] @ p.components.T + p.center
            col += k
        return out

    @property
    def captured_variance_(self):
        return [p.captured_variance for p in self.projections_]


def project_and_fuse(vec, normalizer: FeatureNormalizer, bundle: SubsetPCA, speaker=None) -> np.ndarray:
    """Normalise one feature vector and map it to the fused reduced space."""
    values = np.asarray(getattr(vec, "values", vec), dtype=np.float64)
    if values.ndim != 1 or values.size != bundle.n_features_in_:
        raise ArgumentError(f"expected a {bundle.n_features_in_}-dim vector, got shape {values.shape}")
    speakers = None if speaker is None else np.asarray([speaker])
    return bundle.transform(normalizer.transform(values[None, :], speakers=speakers))[0]
