"""Binary containers for feature matrices (EMOF) and fitted models (EMOP).

EMOF layout (little-endian)::

    b"EMOF" | u32 version=1 | u32 rows | u32 cols | f64[rows * cols] row-major

with a sidecar ``<file>.meta.csv`` in manifest format, one row per matrix row.

EMOP layout (little-endian)::

    b"EMOP" | u32 version=1 | u8 normalizer mode (0 global, 1 per speaker)
    normalizer: u32 d | f64 mean[d] | f64 scale[d] | u8 zero_variance[d]
                [per speaker: u32 count, then per speaker i64 id + the same three arrays]
    b"PCA0" | u8 pca mode (0 subset, 1 joint) | u32 n_subsets
        per subset: u32 start | u32 dims | u32 k | f64 total_variance
                    f64 center[dims] | f64 eigenvalues[k] | f64 matrix[dims * k]
    b"OVA0" | u32 n_models | f64 reject_threshold
        per model: b"BSVM" | u16 len | utf-8 class name | u32 dims | f64 weights[dims]
                   f64 bias | f64 C | f64 platt_a | f64 platt_b | u8 flags
    (the OVA0 section is absent when no classifier is stored)
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .corpus import read_manifest_rows, write_manifest_rows
from .dimred import FeatureNormalizer, SubsetPCA, SubsetProjection
from .exceptions import DecodeError
from .svm import BinarySvm, OneVsAllSVM

EMOF_MAGIC = b"EMOF"
EMOP_MAGIC = b"EMOP"
VERSION = 1


def sidecar_path(path) -> Path:
    return Path(str(path) + ".meta.csv")


def write_emof(path, X, entries=None) -> None:
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(EMOF_MAGIC)
        fh.write(struct.pack("<III", VERSION, X.shape[0], X.shape[1]))
        fh.write(X.tobytes())
    if entries is not None:
        if len(entries) != X.shape[0]:
            raise ValueError("metadata rows must align with matrix rows")
        with open(sidecar_path(path), "w", encoding="utf-8", newline="") as fh:
            write_manifest_rows(fh, entries)


def read_emof(path, with_meta: bool = True):
    """Returns ``(X, entries)``; entries is None when no sidecar exists."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != EMOF_MAGIC:
        raise DecodeError(f"{path}: not an EMOF file")
    version, rows, cols = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise DecodeError(f"{path}: unsupported EMOF version {version}")
    if len(data) != 16 + 8 * rows * cols:
        raise DecodeError(f"{path}: payload size does not match {rows}x{cols}")
    X = np.frombuffer(data, dtype="<f8", offset=16).reshape(rows, cols).astype(np.float64)
    entries = None
    side = sidecar_path(path)
    if with_meta and side.exists():
        with open(side, encoding="utf-8", newline="") as fh:
            entries = read_manifest_rows(fh)
        if len(entries) != rows:
            raise DecodeError(f"{side}: {len(entries)} metadata rows for {rows} feature rows")
    return X, entries


def write_feature_csv(path, X, entries, names) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "corpus", "emotion", "speaker", "gender"] + list(names))
        for (meta, p), row in zip(entries, X):
            writer.writerow([p, meta.corpus_id, meta.emotion, meta.speaker_id, meta.gender]
                            + [repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# EMOP


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def raw(self, b):
        self.buf.write(b)

    def pack(self, fmt, *values):
        self.buf.write(struct.pack("<" + fmt, *values))

    def f64(self, arr):
        self.buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def u8s(self, arr):
        self.buf.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def raw(self, n):
        if self.pos + n > len(self.data):
            raise DecodeError("EMOP file truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.raw(size))

    def f64(self, n):
        return np.frombuffer(self.raw(8 * n), dtype="<f8").astype(np.float64)

    def u8s(self, n):
        return np.frombuffer(self.raw(n), dtype=np.uint8).astype(bool)

    def expect(self, tag):
        if self.raw(len(tag)) != tag:
            raise DecodeError(f"expected section {tag!r}")


def _write_stats(w, mean, scale, zero):
    w.f64(mean)
    w.f64(scale)
    w.u8s(zero)


def dump_model(normalizer: FeatureNormalizer, pca: SubsetPCA, classifier: OneVsAllSVM = None) -> bytes:
    w = _Writer()
    w.raw(EMOP_MAGIC)
    w.pack("I", VERSION)
    per_speaker = normalizer.mode == "per_speaker"
    w.pack("B", 1 if per_speaker else 0)
    d = normalizer.n_features_in_
    w.pack("I", d)
    _write_stats(w, normalizer.mean_, normalizer.scale_, normalizer.zero_variance_)
    if per_speaker:
        w.pack("I", len(normalizer.speaker_stats_))
        for spk in sorted(normalizer.speaker_stats_):
            w.pack("q", int(spk))
            _write_stats(w, *normalizer.speaker_stats_[spk])

    w.raw(b"PCA0")
    w.pack("B", 1 if pca.mode == "joint" else 0)
    w.pack("I", len(pca.projections_))
    for p in pca.projections_:
        dims, k = p.components.shape
        w.pack("IIId", p.start, dims, k, p.total_variance)
        w.f64(p.center)
        w.f64(p.eigenvalues)
        w.f64(p.components)

    if classifier is not None:
        w.raw(b"OVA0")
        w.pack("Id", len(classifier.binaries_), float(classifier.reject_threshold))
        for label, b in zip(classifier.classes_, classifier.binaries_):
            name = str(label).encode("utf-8")
            w.raw(b"BSVM")
            w.pack("H", len(name))
            w.raw(name)
            w.pack("I", b.weights.size)
            w.f64(b.weights)
            w.pack("ddddB", b.bias, b.C, b.platt_a, b.platt_b,
                   (1 if b.converged else 0) | (2 if b.platt_clamped else 0))
    return w.buf.getvalue()


def load_model(data: bytes):
    """Inverse of :func:`dump_model`; returns ``(normalizer, pca, classifier_or_None)``."""
    try:
        return _load_model(data)
    except (UnicodeDecodeError, ValueError, IndexError) as exc:
        raise DecodeError(f"corrupt EMOP model: {exc}") from exc


def _load_model(data: bytes):
    r = _Reader(data)
    r.expect(EMOP_MAGIC)
    (version,) = r.unpack("I")
    if version != VERSION:
        raise DecodeError(f"unsupported EMOP version {version}")
    (mode,) = r.unpack("B")
    (d,) = r.unpack("I")
    norm = FeatureNormalizer(mode="per_speaker" if mode == 1 else "global")
    norm.n_features_in_ = d
    norm.mean_, norm.scale_, norm.zero_variance_ = r.f64(d), r.f64(d), r.u8s(d)
    norm.speaker_stats_ = {}
    if mode == 1:
        (count,) = r.unpack("I")
        for _ in range(count):
            (spk,) = r.unpack("q")
            norm.speaker_stats_[spk] = (r.f64(d), r.f64(d), r.u8s(d))

    r.expect(b"PCA0")
    pca_mode, n_sub = r.unpack("BI")
    projections = []
    for _ in range(n_sub):
        start, dims, k, total = r.unpack("IIId")
        center = r.f64(dims)
        evals = r.f64(k)
        comps = r.f64(dims * k).reshape(dims, k)
        projections.append(SubsetProjection(start, center, comps, evals, total))
    pca = SubsetPCA(
        n_components=tuple(p.components.shape[1] for p in projections),
        subsets=tuple((p.start, p.stop) for p in projections),
        mode="joint" if pca_mode == 1 else "subset",
    )
    pca.projections_ = projections
    pca.n_features_in_ = d
    pca.n_components_ = sum(p.components.shape[1] for p in projections)

    classifier = None
    if r.pos < len(data):
        r.expect(b"OVA0")
        n_models, threshold = r.unpack("Id")
        classes, binaries = [], []
        for _ in range(n_models):
            r.expect(b"BSVM")
            (length,) = r.unpack("H")
            classes.append(r.raw(length).decode("utf-8"))
            (dims,) = r.unpack("I")
            weights = r.f64(dims)
            bias, C, a, b, flags = r.unpack("ddddB")
            binaries.append(BinarySvm(weights, bias, C, a, b, bool(flags & 1), bool(flags & 2)))
        classifier = OneVsAllSVM.from_binaries(classes, binaries, reject_threshold=threshold)
    if r.pos != len(data):
        raise DecodeError("trailing bytes after EMOP model")
    return norm, pca, classifier


def save_model(path, normalizer, pca, classifier=None) -> None:
    Path(path).write_bytes(dump_model(normalizer, pca, classifier))


def read_model(path):
    return load_model(Path(path).read_bytes())
