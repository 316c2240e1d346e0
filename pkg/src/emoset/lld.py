"""Frame-level low-level descriptors (LLDs) and their deltas.

Column layout of an :class:`LldMatrix` (38 descriptors)::

    0       loudness
    1-15    mfcc0 .. mfcc14
    16-23   logMelBand0 .. logMelBand7
    24-31   lspFreq0 .. lspFreq7
    32      f0Env
    33      voicingProb
    34      f0Final
    35      jitterLocal
    36      jitterDDP
    37      shimmerLocal

The first 34 form the general group, the last 4 the pitch group.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dsp import NFFT, VOICING_MIN, autocorrelation, fft, ifft, next_pow2, power_spectrum
from .exceptions import ArgumentError, NumericalError

SAMPLE_RATE = 16000
N_MFCC = 15
N_MFCC_FILTERS = 26
N_LOGMEL = 8
LPC_ORDER = 16
N_LSP = 8
F0_MIN_HZ = 55.0
F0_MAX_HZ = 400.0
ENVELOPE_ALPHA = 0.1
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10
DELTA_WINDOW = 2

GENERAL_LLDS = (
    ["loudness"]
    + [f"mfcc{i}" for i in range(N_MFCC)]
    + [f"logMelBand{i}" for i in range(N_LOGMEL)]
    + [f"lspFreq{i}" for i in range(N_LSP)]
    + ["f0Env", "voicingProb"]
)
PITCH_LLDS = ["f0Final", "jitterLocal", "jitterDDP", "shimmerLocal"]
LLD_NAMES = tuple(GENERAL_LLDS + PITCH_LLDS)
N_GENERAL = len(GENERAL_LLDS)
N_PITCH = len(PITCH_LLDS)
assert N_GENERAL == 34 and N_PITCH == 4


@dataclass(frozen=True)
class LldMatrix:
    values: np.ndarray
    deltas: np.ndarray
    timestamps_s: np.ndarray
    descriptor_ids: tuple = LLD_NAMES

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.descriptor_ids.index(name)]


# --------------------------------------------------------------------------
# Mel filterbanks and cepstra


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_filters: int, nfft: int = NFFT, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters (unit peak) on an HTK mel scale, shape ``(n_filters, nfft//2+1)``."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def filter_centers_hz(n_filters: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2))
    return edges[1:-1]


@lru_cache(maxsize=4)
def _dct_matrix(n_in: int, n_out: int) -> np.ndarray:
    # orthonormal DCT-II
    k = np.arange(n_out)[:, None]
    m = np.arange(n_in)[None, :]
    mat = np.cos(np.pi * k * (m + 0.5) / n_in) * np.sqrt(2.0 / n_in)
    mat[0] /= np.sqrt(2.0)
    mat.setflags(write=False)
    return mat


def cepstrum(log_energies, n_coeffs: int = N_MFCC) -> np.ndarray:
    log_energies = np.asarray(log_energies, dtype=np.float64)
    return log_energies @ _dct_matrix(log_energies.shape[-1], n_coeffs).T


def preemphasize(frames, coef: float = PREEMPHASIS) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    out = frames.copy()
    out[..., 1:] -= coef * frames[..., :-1]
    return out


def _hamming_power(frames) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    return power_spectrum(frames * np.hamming(frames.shape[-1]), NFFT)


def mfcc(frame, n_coeffs: int = N_MFCC, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """MFCCs 0..n_coeffs-1 of one raw frame (or a stack of frames).

    The frame is pre-emphasised and Hamming windowed here; the 26-filter
    log energies are floored at 1e-10 before the DCT.
    """
    power = _hamming_power(preemphasize(frame))
    energies = power @ mel_filterbank(N_MFCC_FILTERS, NFFT, sample_rate).T
    return cepstrum(np.log(np.maximum(energies, LOG_FLOOR)), n_coeffs)


def log_mel_bands(frame, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Log energies of 8 mel bands spanning 0 to Nyquist (Hamming window, no pre-emphasis)."""
    power = _hamming_power(frame)
    energies = power @ mel_filterbank(N_LOGMEL, NFFT, sample_rate).T
    return np.log(np.maximum(energies, LOG_FLOOR))


# --------------------------------------------------------------------------
# Linear prediction and line spectral frequencies


def lpc_batch(frames, order: int = LPC_ORDER) -> np.ndarray:
    """Levinson-Durbin on Hamming-windowed frames, vectorised over rows.

    Frames whose recursion degenerates get the trivial predictor (all zeros).
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    r = autocorrelation(frames * np.hamming(frames.shape[1]), order)
    n = r.shape[0]
    poly = np.zeros((n, order + 1))
    poly[:, 0] = 1.0
    err = r[:, 0].copy()
    ok = err > 0.0
    err[~ok] = 1.0
    for i in range(1, order + 1):
        acc = r[:, i] + np.einsum("fj,fj->f", poly[:, 1:i], r[:, i - 1:0:-1])
        k = np.where(ok, -acc / err, 0.0)
        poly[:, 1:i] = poly[:, 1:i] + k[:, None] * poly[:, i - 1:0:-1]
        poly[:, i] = k
        err = err * (1.0 - k * k)
        ok &= err > 1e-14 * np.where(r[:, 0] > 0, r[:, 0], 1.0)
    poly[~ok, 1:] = 0.0
    return -poly[:, 1:]


def _lsp_polynomials(lpc):
    """Deflated palindromic sum and difference polynomials, each of degree p."""
    lpc = np.atleast_2d(lpc)
    n, p = lpc.shape
    a = np.zeros((n, p + 2))
    a[:, 0] = 1.0
    a[:, 1:p + 1] = -lpc
    rev = a[:, ::-1]
    P = a + rev
    Q = a - rev
    # divide P by (1 + z^-1) and Q by (1 - z^-1)
    Pd = np.zeros((n, p + 1))
    Qd = np.zeros((n, p + 1))
    Pd[:, 0] = P[:, 0]
    Qd[:, 0] = Q[:, 0]
    for k in range(1, p + 1):
        Pd[:, k] = P[:, k] - Pd[:, k - 1]
        Qd[:, k] = Q[:, k] + Qd[:, k - 1]
    return Pd, Qd


def _cos_series(poly):
    """Coefficients c of G(w) = sum_k c[k] cos(k w) equal to e^{j w p/2} C(e^{jw})."""
    p = poly.shape[1] - 1
    half = p // 2
    c = np.empty((poly.shape[0], half + 1))
    c[:, 0] = poly[:, half]
    c[:, 1:] = 2.0 * poly[:, half - 1::-1][:, :half]
    return c


def _eval_cos_series(c, w):
    k = np.arange(c.shape[-1])
    return np.sum(c * np.cos(np.multiply.outer(w, k)), axis=-1)


def _series_roots(c, n_roots: int, grid: int):
    """Roots of cosine series in (0, pi) by grid scan + bisection, or None per row on count mismatch."""
    w = np.linspace(0.0, np.pi, grid + 1)
    vals = c @ np.cos(np.outer(np.arange(c.shape[1]), w))
    s = np.sign(vals)
    s[s == 0] = 1.0
    change = s[:, :-1] * s[:, 1:] < 0
    counts = change.sum(axis=1)
    good = counts == n_roots
    roots = np.full((c.shape[0], n_roots), np.nan)
    if not good.any():
        return roots, good
    rows, cols = np.nonzero(change[good])
    frame_idx = np.nonzero(good)[0][rows]
    lo = w[cols].copy()
    hi = w[cols + 1].copy()
    cc = c[frame_idx]
    f_lo = vals[frame_idx, cols]
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        f_mid = _eval_cos_series(cc, mid)
        left = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(left, mid, lo)
        f_lo = np.where(left, f_mid, f_lo)
        hi = np.where(left, hi, mid)
    roots[good] = (0.5 * (lo + hi)).reshape(-1, n_roots)
    return roots, good


def lsp_frequencies(lpc, n_out: int = N_LSP) -> np.ndarray:
    """Line spectral frequencies (radians, ascending) from predictor coefficients.

    Accepts one coefficient vector or a stack; returns the lowest ``n_out``
    of the ``p`` interleaved frequencies.
    """
    lpc = np.asarray(lpc, dtype=np.float64)
    single = lpc.ndim == 1
    lpc = np.atleast_2d(lpc)
    p = lpc.shape[1]
    if p % 2:
        raise ArgumentError("LSP conversion needs an even LPC order")
    Pd, Qd = _lsp_polynomials(lpc)
    cP, cQ = _cos_series(Pd), _cos_series(Qd)
    out = np.full((lpc.shape[0], p), np.nan)
    todo = np.arange(lpc.shape[0])
    for grid in (512, 4096, 32768):
        rp, gp = _series_roots(cP[todo], p // 2, grid)
        rq, gq = _series_roots(cQ[todo], p // 2, grid)
        good = gp & gq
        out[todo[good]] = np.sort(np.concatenate([rp[good], rq[good]], axis=1), axis=1)
        todo = todo[~good]
        if todo.size == 0:
            break
    if todo.size:
        raise NumericalError(f"LSP root search failed on {todo.size} frame(s)")
    out = out[:, :n_out]
    return out[0] if single else out


# --------------------------------------------------------------------------
# Pitch


def pitch_analysis(frames, sample_rate: int = SAMPLE_RATE, f0_min: float = F0_MIN_HZ,
                   f0_max: float = F0_MAX_HZ, voicing_min: float = VOICING_MIN):
    """Normalised-autocorrelation pitch estimate per frame.

    Returns ``(f0_hz, voicing_prob)``. The voicing probability is the
    normalised cross-correlation at the chosen lag clamped to [0, 1]; f0 is
    0 for frames below ``voicing_min``.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    frames = frames - frames.mean(axis=1, keepdims=True)
    n, L = frames.shape
    lag_lo = int(np.floor(sample_rate / f0_max))
    lag_hi = min(int(np.ceil(sample_rate / f0_min)), L - 2)
    if lag_hi <= lag_lo + 1:
        raise ArgumentError("frame too short for the pitch search range")

    nfft = next_pow2(L + lag_hi + 1)
    X = fft(frames, nfft)
    r = ifft(X.real ** 2 + X.imag ** 2).real[:, : lag_hi + 2]
    sq = np.cumsum(frames * frames, axis=1)
    total = sq[:, -1:]
    lags = np.arange(lag_lo - 1, lag_hi + 2)
    head = sq[:, L - 1 - lags]  # energy of x[0 : L - lag]
    tail = total - np.where(lags > 0, sq[:, np.maximum(lags - 1, 0)], 0.0)  # energy of x[lag:]
    denom = np.sqrt(np.maximum(head * tail, 0.0))
    scale = np.maximum(total, 1e-300)
    valid = denom > 1e-10 * scale
    nccf = np.where(valid, r[:, lags] / np.where(valid, denom, 1.0), 0.0)

    inner = nccf[:, 1:-1]  # lags lag_lo .. lag_hi
    peak = inner.max(axis=1)
    is_local = (inner >= nccf[:, :-2]) & (inner >= nccf[:, 2:])
    candidate = is_local & (inner >= 0.9 * peak[:, None]) & (peak[:, None] > 0)
    first = np.where(candidate.any(axis=1), candidate.argmax(axis=1), inner.argmax(axis=1))

    rows = np.arange(n)
    c0 = nccf[rows, first]
    c1 = nccf[rows, first + 1]
    c2 = nccf[rows, first + 2]
    curv = c0 - 2.0 * c1 + c2
    shift = np.where(curv < 0, 0.5 * (c0 - c2) / np.where(curv < 0, curv, -1.0), 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    lag = lags[first + 1] + shift

    voicing = np.clip(c1, 0.0, 1.0)
    f0 = np.where(voicing >= voicing_min, sample_rate / lag, 0.0)
    return f0, voicing


def f0_envelope(f0_track, alpha: float = ENVELOPE_ALPHA) -> np.ndarray:
    """Exponential smoothing of voiced f0, held across unvoiced frames."""
    env = np.zeros(len(f0_track))
    state = 0.0
    started = False
    for i, f in enumerate(f0_track):
        if f > 0:
            state = f if not started else state + alpha * (f - state)
            started = True
        env[i] = state
    return env


def f0_and_voicing(frame, sample_rate: int = SAMPLE_RATE, prev_envelope: float = 0.0):
    """Pitch, voicing probability and updated f0 envelope for one frame."""
    f0, voicing = pitch_analysis(np.asarray(frame)[None, :], sample_rate)
    f0, voicing = float(f0[0]), float(voicing[0])
    if f0 > 0:
        env = f0 if prev_envelope <= 0 else prev_envelope + ENVELOPE_ALPHA * (f0 - prev_envelope)
    else:
        env = prev_envelope
    return f0, voicing, env


def loudness(frame) -> np.ndarray:
    """Intensity proxy ``RMS ** 0.3``."""
    frame = np.asarray(frame, dtype=np.float64)
    return np.sqrt(np.mean(frame * frame, axis=-1)) ** 0.3


def jitter_shimmer(f0_track, peak_amplitudes) -> np.ndarray:
    """Frame-to-frame period and amplitude perturbation, shape ``(n, 3)``.

    Columns are local jitter, DDP jitter and local shimmer, each normalised
    by the utterance mean over voiced frames. Frames without enough voiced
    predecessors get 0.
    """
    f0 = np.asarray(f0_track, dtype=np.float64)
    amp = np.asarray(peak_amplitudes, dtype=np.float64)
    out = np.zeros((f0.size, 3))
    voiced = f0 > 0
    if voiced.sum() < 2:
        return out
    T = np.where(voiced, 1.0 / np.where(voiced, f0, 1.0), 0.0)
    mean_T = T[voiced].mean()
    mean_A = amp[voiced].mean()
    d1 = np.zeros_like(T)
    d1[1:] = T[1:] - T[:-1]
    pair = np.zeros_like(voiced)
    pair[1:] = voiced[1:] & voiced[:-1]
    triple = np.zeros_like(voiced)
    triple[2:] = pair[2:] & voiced[:-2]
    out[:, 0] = np.where(pair, np.abs(d1) / mean_T, 0.0)
    dd = np.zeros_like(T)
    dd[1:] = d1[1:] - d1[:-1]
    out[:, 1] = np.where(triple, np.abs(dd) / mean_T, 0.0)
    if mean_A > 0:
        dA = np.zeros_like(amp)
        dA[1:] = amp[1:] - amp[:-1]
        out[:, 2] = np.where(pair, np.abs(dA) / mean_A, 0.0)
    return out


def delta_coefficients(track, window: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas with edge frames repeated; works along axis 0."""
    x = np.asarray(track, dtype=np.float64)
    if x.shape[0] < 1:
        raise ArgumentError("delta needs at least one frame")
    pad = [(window, window)] + [(0, 0)] * (x.ndim - 1)
    xp = np.pad(x, pad, mode="edge")
    n = x.shape[0]
    num = np.zeros_like(x)
    for w in range(1, window + 1):
        num += w * (xp[window + w: window + w + n] - xp[window - w: window - w + n])
    return num / (2.0 * sum(w * w for w in range(1, window + 1)))


# --------------------------------------------------------------------------
# Full descriptor matrix


def extract_llds(series, f0=None, voicing=None) -> LldMatrix:
    """All 38 descriptors and deltas for a (voice-activity filtered) frame series."""
    frames = series.frames
    sr = series.sample_rate_hz
    if f0 is None or voicing is None:
        f0, voicing = pitch_analysis(frames, sr)
    n = frames.shape[0]
    values = np.empty((n, len(LLD_NAMES)))
    values[:, 0] = loudness(frames)
    values[:, 1:16] = mfcc(frames, N_MFCC, sr)
    values[:, 16:24] = log_mel_bands(frames, sr)
    values[:, 24:32] = lsp_frequencies(lpc_batch(frames, LPC_ORDER), N_LSP)
    values[:, 32] = f0_envelope(f0)
    values[:, 33] = voicing
    values[:, 34] = f0
    values[:, 35:38] = jitter_shimmer(f0, np.max(np.abs(frames), axis=1))
    deltas = delta_coefficients(values)
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(deltas))):
        raise NumericalError("non-finite low-level descriptor")
    return LldMatrix(values, deltas, np.asarray(series.timestamps_s))


def write_lld_csv(path, llds: LldMatrix) -> None:
    """Per-frame dump: timestamp, 38 descriptors, 38 deltas."""
    header = ["timestamp"] + list(llds.descriptor_ids) + [f"{n}_de" for n in llds.descriptor_ids]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t, row, drow in zip(llds.timestamps_s, llds.values, llds.deltas):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [repr(float(v)) for v in drow])
