"""Statistical functionals over LLD trajectories and the 1582-dim layout.

Index layout of a feature vector::

    [0, 1428)     68 trajectories (34 LLDs, then their 34 deltas) x 21 functionals,
                  index = trajectory * 21 + functional
    [1428, 1580)  8 pitch trajectories (4 LLDs, then 4 deltas) x 19 functionals,
                  index = 1428 + trajectory * 19 + functional
    1580          number of pitch onsets
    1581          voiced-activity duration in seconds

Changing either functional list changes the file format.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ArgumentError
from .lld import LLD_NAMES, N_GENERAL, N_PITCH, LldMatrix

FUNCTIONALS = (
    "amean",
    "stddev",
    "skewness",
    "kurtosis",
    "min",
    "max",
    "range",
    "maxPos",
    "minPos",
    "quartile1",
    "quartile2",
    "quartile3",
    "iqr1-2",
    "iqr2-3",
    "iqr1-3",
    "percentile1.0",
    "percentile99.0",
    "pctlrange0-1",
    "linregc1",
    "linregc2",
    "linregerrQ",
)
PITCH_FUNCTIONALS = tuple(f for f in FUNCTIONALS if f not in ("min", "minPos"))
assert len(FUNCTIONALS) == 21 and len(PITCH_FUNCTIONALS) == 19

_DISPERSION = {"stddev", "skewness", "kurtosis", "range", "maxPos", "minPos",
               "iqr1-2", "iqr2-3", "iqr1-3", "pctlrange0-1", "linregc1", "linregerrQ"}


@dataclass(frozen=True)
class SubsetLayout:
    subset1: tuple = (0, 1428)
    subset2: tuple = (1428, 1580)
    subset3: tuple = (1580, 1582)

    @property
    def n_features(self) -> int:
        return self.subset3[1]

    @property
    def ranges(self) -> tuple:
        return (self.subset1, self.subset2, self.subset3)

    def slices(self) -> tuple:
        return tuple(slice(a, b) for a, b in self.ranges)


LAYOUT = SubsetLayout()
N_FEATURES = LAYOUT.n_features


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: SubsetLayout = LAYOUT
    utterance: Optional[object] = None


def feature_names() -> list:
    names = []
    general = list(LLD_NAMES[:N_GENERAL]) + [f"{n}_de" for n in LLD_NAMES[:N_GENERAL]]
    for traj in general:
        names.extend(f"{traj}_{f}" for f in FUNCTIONALS)
    pitch = list(LLD_NAMES[N_GENERAL:]) + [f"{n}_de" for n in LLD_NAMES[N_GENERAL:]]
    for traj in pitch:
        names.extend(f"{traj}_{f}" for f in PITCH_FUNCTIONALS)
    names.extend(["F0final_nOnsets", "duration"])
    return names


def apply_functionals(tracks, names=FUNCTIONALS) -> np.ndarray:
    """Evaluate functionals on every column of ``tracks`` (frames x trajectories).

    Returns shape ``(n_trajectories, len(names))``.
    """
    x = np.asarray(tracks, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    L, n = x.shape
    if L < 1:
        raise ArgumentError("functionals need at least one frame")

    mean = x.mean(axis=0)
    d = x - mean
    scale = np.maximum(np.abs(x).max(axis=0), np.finfo(float).tiny)
    spread = np.abs(d).max(axis=0)
    flat = spread <= 1e-12 * scale
    m2 = np.mean(d ** 2, axis=0)
    # shape moments on rescaled deviations so tiny tracks do not underflow
    z = d / np.where(flat, 1.0, spread)
    z2 = np.mean(z ** 2, axis=0)
    safe_z2 = np.where(flat, 1.0, z2)
    vmin, vmax = x.min(axis=0), x.max(axis=0)
    q1, q2, q3, p1, p99 = np.percentile(x, [25, 50, 75, 1, 99], axis=0)
    denom_pos = max(L - 1, 1)

    t = np.arange(L, dtype=np.float64)
    if L > 1:
        tc = t - t.mean()
        slope = (tc @ d) / (tc @ tc)
    else:
        slope = np.zeros(n)
    offset = mean - slope * t.mean()
    resid = x - (offset + np.outer(t, slope))
    errq = np.mean(resid ** 2, axis=0)

    values = {
        "amean": mean,
        "stddev": np.sqrt(m2),
        "skewness": np.mean(z ** 3, axis=0) / safe_z2 ** 1.5,
        "kurtosis": np.mean(z ** 4, axis=0) / safe_z2 ** 2,
        "min": vmin,
        "max": vmax,
        "range": vmax - vmin,
        "maxPos": x.argmax(axis=0) / denom_pos,
        "minPos": x.argmin(axis=0) / denom_pos,
        "quartile1": q1,
        "quartile2": q2,
        "quartile3": q3,
        "iqr1-2": q2 - q1,
        "iqr2-3": q3 - q2,
        "iqr1-3": q3 - q1,
        "percentile1.0": p1,
        "percentile99.0": p99,
        "pctlrange0-1": p99 - p1,
        "linregc1": slope,
        "linregc2": offset,
        "linregerrQ": errq,
    }
    out = np.empty((n, len(names)))
    for j, name in enumerate(names):
        col = np.asarray(values[name], dtype=np.float64)
        if name in _DISPERSION:
            col = np.where(flat, 0.0, col)
        elif name == "linregc2":
            col = np.where(flat, x[0], col)
        out[:, j] = col
    return out


def functional(track, name: str) -> float:
    """A single named functional of a 1-D track."""
    if name not in FUNCTIONALS:
        raise ArgumentError(f"unknown functional {name!r}")
    return float(apply_functionals(np.asarray(track, dtype=np.float64)[:, None], (name,))[0, 0])


def pitch_onsets_and_duration(f0_track, hop_s: float):
    """Count unvoiced-to-voiced transitions (a voiced first frame counts) and the duration."""
    voiced = np.asarray(f0_track) > 0
    prev = np.concatenate([[False], voiced[:-1]])
    onsets = int(np.count_nonzero(voiced & ~prev))
    return onsets, len(voiced) * hop_s


def assemble_feature_vector(llds: LldMatrix, hop_s: float, utterance=None) -> FeatureVector:
    if llds.num_frames < 1:
        raise ArgumentError("no frames to summarise")
    g = N_GENERAL
    general = np.hstack([llds.values[:, :g], llds.deltas[:, :g]])
    pitch = np.hstack([llds.values[:, g:g + N_PITCH], llds.deltas[:, g:g + N_PITCH]])
    onsets, duration = pitch_onsets_and_duration(llds.values[:, g], hop_s)
    vec = np.concatenate([
        apply_functionals(general, FUNCTIONALS).reshape(-1),
        apply_functionals(pitch, PITCH_FUNCTIONALS).reshape(-1),
        [float(onsets), duration],
    ])
    assert vec.size == N_FEATURES
    return FeatureVector(vec, LAYOUT, utterance)
