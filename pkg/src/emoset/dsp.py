"""Signal kernels: framing, voice activity, FFT, autocorrelation and LPC.

All routines accept a single frame (1-D) or a stack of frames (2-D, one
frame per row) unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import AllUnvoicedError, ArgumentError, DegenerateFrameError, TooShortError

DEFAULT_FRAME_MS = 60.0
DEFAULT_HOP_MS = 10.0
ENERGY_FLOOR_DB = -60.0
RELATIVE_DB = 30.0
VOICING_MIN = 0.3
NFFT = 1024

_DB_FLOOR = 1e-12


@dataclass(frozen=True)
class FrameSeries:
    frames: np.ndarray
    frame_len_samples: int
    hop_samples: int
    timestamps_s: np.ndarray
    sample_rate_hz: int

    def __len__(self):
        return self.frames.shape[0]

    @property
    def hop_s(self) -> float:
        return self.hop_samples / self.sample_rate_hz

    def select(self, keep) -> "FrameSeries":
        keep = np.asarray(keep, dtype=bool)
        return FrameSeries(
            self.frames[keep],
            self.frame_len_samples,
            self.hop_samples,
            self.timestamps_s[keep],
            self.sample_rate_hz,
        )


@dataclass(frozen=True)
class VoicingMask:
    keep: np.ndarray
    energy_db: np.ndarray
    voicing_prob: np.ndarray


def frame_signal(clip, frame_ms: float = DEFAULT_FRAME_MS, hop_ms: float = DEFAULT_HOP_MS) -> FrameSeries:
    """Cut a clip into contiguous frames; a trailing partial frame is dropped."""
    if frame_ms <= 0 or hop_ms <= 0:
        raise ArgumentError("frame and hop lengths must be positive")
    sr = clip.sample_rate_hz
    frame_len = int(round(frame_ms * 1e-3 * sr))
    hop = int(round(hop_ms * 1e-3 * sr))
    if frame_len < 1 or hop < 1:
        raise ArgumentError("frame or hop shorter than one sample")
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size < frame_len:
        raise TooShortError(f"{x.size} samples is shorter than one {frame_len}-sample frame")
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop].copy()
    starts = np.arange(frames.shape[0]) * hop
    return FrameSeries(frames, frame_len, hop, starts / sr, sr)


def rms_db(frames) -> np.ndarray:
    """Frame RMS level in dB relative to a full-scale (RMS 1) signal."""
    frames = np.atleast_2d(frames)
    rms = np.sqrt(np.mean(frames * frames, axis=1))
    return 20.0 * np.log10(np.maximum(rms, _DB_FLOOR))


def remove_unvoiced(
    series: FrameSeries,
    energy_floor_db: float = ENERGY_FLOOR_DB,
    rel_db: float = RELATIVE_DB,
    voicing_min: float = VOICING_MIN,
    voicing_prob=None,
):
    """Drop frames that are both quiet and aperiodic.

    A frame goes when its level is below ``max(energy_floor_db, loudest - rel_db)``
    and its voicing probability is below ``voicing_min``. Returns the kept
    frames and the mask.
    """
    if len(series) == 0:
        raise ArgumentError("empty frame series")
    energy = rms_db(series.frames)
    if voicing_prob is None:
        from .lld import pitch_analysis

        _, voicing_prob = pitch_analysis(series.frames, series.sample_rate_hz)
    voicing_prob = np.asarray(voicing_prob, dtype=np.float64)
    threshold = max(energy_floor_db, float(energy.max()) - rel_db)
    quiet = energy < threshold
    keep = ~(quiet & (voicing_prob < voicing_min))
    if not keep.any():
        raise AllUnvoicedError("no frame survived voice activity detection")
    return series.select(keep), VoicingMask(keep, energy, voicing_prob)


# --------------------------------------------------------------------------
# FFT


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=16)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(m: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.arange(m // 2) / m)


def fft(x, nfft: int) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    Input is zero-padded (or rejected if longer) to ``nfft`` samples.
    """
    if not _is_pow2(nfft):
        raise ArgumentError(f"nfft={nfft} is not a power of two")
    x = np.asarray(x)
    n = x.shape[-1]
    if n > nfft:
        raise ArgumentError(f"frame of {n} samples exceeds nfft={nfft}")
    lead = x.shape[:-1]
    buf = np.zeros(lead + (nfft,), dtype=np.complex128)
    buf[..., :n] = x
    X = buf[..., _bit_reverse(nfft)]
    m = 2
    while m <= nfft:
        half = m // 2
        blocks = X.reshape(lead + (nfft // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(m)
        X = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (nfft,))
        m *= 2
    return X


def ifft(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    n = X.shape[-1]
    return np.conj(fft(np.conj(X), n)) / n


def fft_magnitude(frame, nfft: int = NFFT, window: bool = False) -> np.ndarray:
    """One-sided magnitude spectrum (``nfft // 2 + 1`` bins)."""
    frame = np.asarray(frame, dtype=np.float64)
    if window:
        frame = frame * np.hamming(frame.shape[-1])
    return np.abs(fft(frame, nfft)[..., : nfft // 2 + 1])


def power_spectrum(frames, nfft: int = NFFT) -> np.ndarray:
    X = fft(frames, nfft)[..., : nfft // 2 + 1]
    return X.real ** 2 + X.imag ** 2


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def autocorrelation(frame, max_lag: int) -> np.ndarray:
    """``r[tau] = sum_n x[n] x[n + tau]`` for ``tau = 0 .. max_lag`` via the FFT."""
    frame = np.asarray(frame, dtype=np.float64)
    n = frame.shape[-1]
    if not 0 <= max_lag < n:
        raise ArgumentError(f"max_lag={max_lag} must be in [0, {n})")
    nfft = next_pow2(n + max_lag + 1)
    X = fft(frame, nfft)
    r = ifft(X.real ** 2 + X.imag ** 2).real
    return r[..., : max_lag + 1]


# --------------------------------------------------------------------------
# Linear prediction


def levinson_durbin(r, order: int):
    """Solve the normal equations for autocorrelation ``r``.

    Returns predictor coefficients ``a`` (``x[n] ~ sum_k a[k] x[n-k-1]``),
    the final prediction error power and the reflection coefficients.
    """
    r = np.asarray(r, dtype=np.float64)
    if r[0] <= 0.0:
        raise DegenerateFrameError("zero-energy frame")
    poly = np.zeros(order + 1)
    poly[0] = 1.0
    err = r[0]
    refl = np.zeros(order)
    for i in range(1, order + 1):
        acc = r[i] + np.dot(poly[1:i], r[i - 1:0:-1])
        k = -acc / err
        poly[1:i] = poly[1:i] + k * poly[i - 1:0:-1]
        poly[i] = k
        refl[i - 1] = k
        err *= 1.0 - k * k
        if err <= 1e-14 * r[0]:
            raise DegenerateFrameError(f"prediction error vanished at order {i}")
    return -poly[1:], err, refl


def lpc_coefficients(frame, order: int):
    """Autocorrelation-method LPC of a single frame.

    Returns ``(coefficients, gain)`` with coefficients in predictor form and
    ``gain`` the RMS prediction error.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if order < 1 or frame.size <= order:
        raise ArgumentError("LPC order must be >= 1 and below the frame length")
    if not np.any(frame):
        raise DegenerateFrameError("all-zero frame")
    a, err, _ = levinson_durbin(autocorrelation(frame, order), order)
    return a, float(np.sqrt(err))
