"""Audio to 1582-dim paralinguistic feature vectors."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import AudioClip, read_wav, resample_to_16k
from .dsp import (DEFAULT_FRAME_MS, DEFAULT_HOP_MS, ENERGY_FLOOR_DB, RELATIVE_DB, VOICING_MIN,
                  frame_signal, remove_unvoiced)
from .functionals import N_FEATURES, FeatureVector, assemble_feature_vector
from .lld import extract_llds, pitch_analysis


def extract_clip(
    clip: AudioClip,
    frame_ms: float = DEFAULT_FRAME_MS,
    hop_ms: float = DEFAULT_HOP_MS,
    energy_floor_db: float = ENERGY_FLOOR_DB,
    rel_db: float = RELATIVE_DB,
    voicing_min: float = VOICING_MIN,
    utterance=None,
) -> FeatureVector:
    """Resample, frame, drop unvoiced frames, describe and summarise one clip.

    Raises ``AllUnvoicedError`` when nothing survives voice activity detection.
    """
    clip = resample_to_16k(clip)
    series = frame_signal(clip, frame_ms, hop_ms)
    f0, voicing = pitch_analysis(series.frames, series.sample_rate_hz, voicing_min=voicing_min)
    kept, mask = remove_unvoiced(series, energy_floor_db, rel_db, voicing_min, voicing_prob=voicing)
    llds = extract_llds(kept, f0[mask.keep], voicing[mask.keep])
    return assemble_feature_vector(llds, kept.hop_s, utterance)


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer from audio (clips or WAV paths) to feature rows.

    Parameters
    ----------
    frame_ms, hop_ms : float
        Analysis frame length and hop.
    energy_floor_db, rel_db, voicing_min : float
        Voice activity thresholds; see :func:`emoset.dsp.remove_unvoiced`.
    """

    def __init__(self, frame_ms=DEFAULT_FRAME_MS, hop_ms=DEFAULT_HOP_MS,
                 energy_floor_db=ENERGY_FLOOR_DB, rel_db=RELATIVE_DB, voicing_min=VOICING_MIN):
        self.frame_ms = frame_ms
        self.hop_ms = hop_ms
        self.energy_floor_db = energy_floor_db
        self.rel_db = rel_db
        self.voicing_min = voicing_min

    def fit(self, X=None, y=None):
        self.n_features_out_ = N_FEATURES
        return self

    def extract_one(self, item) -> np.ndarray:
        clip = item if isinstance(item, AudioClip) else read_wav(item)
        return extract_clip(clip, self.frame_ms, self.hop_ms, self.energy_floor_db,
                            self.rel_db, self.voicing_min).values

    def transform(self, X):
        rows = [self.extract_one(item) for item in X]
        return np.vstack(rows) if rows else np.empty((0, N_FEATURES))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        tags.input_tags.two_d_array = False
        return tags
