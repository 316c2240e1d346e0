"""Audio decoding and corpus manifests for EMO-DB and RAVDESS.

WAV files are decoded with a small RIFF parser (PCM 8/16/24/32-bit and IEEE
float, mono or stereo). Labels come from each corpus's filename convention.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import re
import struct
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy.signal import resample_poly

from .exceptions import DecodeError, ManifestError, UnsupportedFormat

logger = logging.getLogger(__name__)

TARGET_RATE = 16000
INGEST_RATES = (16000, 22050, 44100, 48000)

EMODB = "EMODB"
RAVDESS = "RAVDESS"
CORPORA = (EMODB, RAVDESS)

EMODB_EMOTIONS = ("anger", "boredom", "disgust", "fear", "happiness", "neutral", "sadness")
RAVDESS_EMOTIONS = ("neutral", "calm", "happiness", "sadness", "anger", "fear", "disgust", "surprise")

EMODB_EMOTION_CODES = {
    "W": "anger",
    "L": "boredom",
    "E": "disgust",
    "A": "fear",
    "F": "happiness",
    "T": "sadness",
    "N": "neutral",
}
EMODB_SPEAKER_GENDER = {
    3: "male", 10: "male", 11: "male", 12: "male", 15: "male",
    8: "female", 9: "female", 13: "female", 14: "female", 16: "female",
}
RAVDESS_EMOTION_CODES = {
    1: "neutral",
    2: "calm",
    3: "happiness",
    4: "sadness",
    5: "anger",
    6: "fear",
    7: "disgust",
    8: "surprise",
}
RAVDESS_INTENSITY_CODES = {1: "normal", 2: "strong"}

_EMODB_RE = re.compile(r"^(\d{2})([ab])(\d{2})([A-Z])([a-z])\.wav$")
_RAVDESS_RE = re.compile(r"^(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})-(\d{2})\.wav$")

MANIFEST_COLUMNS = ("path", "corpus", "emotion", "speaker", "gender", "intensity", "statement")


def emotions_for(corpus_id: str) -> tuple:
    """Fixed emotion order of a corpus; used for label indices and tie-breaking."""
    if corpus_id == EMODB:
        return EMODB_EMOTIONS
    if corpus_id == RAVDESS:
        return RAVDESS_EMOTIONS
    raise ManifestError(f"unknown corpus {corpus_id!r}")


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int
    source_path: str = ""

    def __post_init__(self):
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DecodeError("audio clip must hold a non-empty mono signal")
        if self.sample_rate_hz <= 0:
            raise DecodeError(f"invalid sample rate {self.sample_rate_hz}")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class UtteranceMeta:
    corpus_id: str
    emotion: str
    speaker_id: int
    gender: str
    statement_id: int
    intensity: Optional[str] = None


@dataclass
class CorpusManifest:
    corpus_id: str
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def paths(self) -> list:
        return [p for _, p in self.entries]

    @property
    def metas(self) -> list:
        return [m for m, _ in self.entries]

    def emotion_counts(self) -> dict:
        counts = {e: 0 for e in emotions_for(self.corpus_id)}
        for meta, _ in self.entries:
            counts[meta.emotion] += 1
        return counts

    def filter(self, intensity: Optional[str] = None, gender: Optional[str] = None) -> "CorpusManifest":
        """Subset of entries; ``intensity`` keeps entries with that intensity (or no intensity)."""
        kept = [
            (m, p)
            for m, p in self.entries
            if (intensity is None or m.intensity in (None, intensity))
            and (gender is None or m.gender == gender)
        ]
        return CorpusManifest(self.corpus_id, kept)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_manifest_rows(fh, self.entries)

    @classmethod
    def from_csv(cls, path) -> "CorpusManifest":
        with open(path, encoding="utf-8", newline="") as fh:
            entries = read_manifest_rows(fh)
        if not entries:
            raise ManifestError(f"{path}: manifest has no rows")
        corpus_ids = {m.corpus_id for m, _ in entries}
        if len(corpus_ids) != 1:
            raise ManifestError(f"{path}: mixed corpora {sorted(corpus_ids)}")
        return cls(corpus_ids.pop(), entries)


def write_manifest_rows(fh, entries: Iterable) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for meta, path in entries:
        writer.writerow([
            path,
            meta.corpus_id,
            meta.emotion,
            meta.speaker_id,
            meta.gender,
            meta.intensity or "",
            meta.statement_id,
        ])


def read_manifest_rows(fh) -> list:
    reader = csv.DictReader(fh)
    if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
        raise ManifestError(f"unexpected manifest header {reader.fieldnames}")
    entries = []
    for row in reader:
        meta = UtteranceMeta(
            corpus_id=row["corpus"],
            emotion=row["emotion"],
            speaker_id=int(row["speaker"]),
            gender=row["gender"],
            statement_id=int(row["statement"]),
            intensity=row["intensity"] or None,
        )
        entries.append((meta, row["path"]))
    return entries


# --------------------------------------------------------------------------
# WAV decoding

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


def _read_chunks(data: bytes):
    if len(data) < 12:
        raise DecodeError("file too short for a RIFF header")
    riff, riff_size, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff in (b"RIFX", b"RF64"):
        raise UnsupportedFormat(f"{riff.decode('ascii')} containers are not supported")
    if riff != b"RIFF" or wave != b"WAVE":
        raise DecodeError("not a RIFF/WAVE file")
    end = min(len(data), 8 + riff_size)
    pos = 12
    chunks = {}
    while pos + 8 <= end:
        cid, size = struct.unpack_from("<4sI", data, pos)
        body_start = pos + 8
        body_end = body_start + size
        if body_end > len(data):
            raise DecodeError(f"chunk {cid!r} runs past end of file")
        chunks.setdefault(cid, data[body_start:body_end])
        pos = body_end + (size & 1)
    return chunks


def parse_wav(data: bytes, source_path: str = "") -> AudioClip:
    """Decode a RIFF/WAVE byte string into a mono clip.

    Integer PCM is scaled by ``1 / 2**(bits-1)`` (8-bit data is unsigned and
    re-centred first), float data is taken as is, and stereo is averaged.
    """
    chunks = _read_chunks(data)
    fmt = chunks.get(b"fmt ")
    if fmt is None or len(fmt) < 16:
        raise DecodeError("missing or short fmt chunk")
    if b"data" not in chunks:
        raise DecodeError("missing data chunk")
    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)

    if tag == _FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise DecodeError("short WAVE_FORMAT_EXTENSIBLE header")
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if tag not in (_FORMAT_PCM, _FORMAT_FLOAT):
        raise UnsupportedFormat(f"format code 0x{tag:04x} is not PCM or IEEE float")
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{channels} channels; only mono and stereo are decoded")
    if tag == _FORMAT_PCM and bits not in (8, 16, 24, 32):
        raise UnsupportedFormat(f"{bits}-bit integer PCM")
    if tag == _FORMAT_FLOAT and bits not in (32, 64):
        raise UnsupportedFormat(f"{bits}-bit float")
    if rate == 0:
        raise DecodeError("sample rate of zero")
    width = bits // 8
    if block_align != channels * width:
        raise DecodeError(f"block align {block_align} inconsistent with {channels}x{bits}-bit")

    raw = chunks[b"data"]
    n_frames = len(raw) // block_align
    if n_frames == 0:
        raise DecodeError("data chunk holds no sample frames")
    raw = raw[: n_frames * block_align]

    if tag == _FORMAT_FLOAT:
        x = np.frombuffer(raw, dtype="<f4" if bits == 32 else "<f8").astype(np.float64)
    elif bits == 8:
        x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        x = ints.astype(np.float64) / float(1 << 23)
    else:
        dtype = "<i2" if bits == 16 else "<i4"
        x = np.frombuffer(raw, dtype=dtype).astype(np.float64) / float(1 << (bits - 1))

    if channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    return AudioClip(np.ascontiguousarray(x), int(rate), source_path)


def read_wav(path) -> AudioClip:
    with open(path, "rb") as fh:
        return parse_wav(fh.read(), str(path))


def encode_wav(samples, sample_rate: int, bits: int = 16) -> bytes:
    """Encode samples in [-1, 1] as integer PCM.

    A 1-D array gives a mono file, an ``(n, 2)`` array a stereo file.
    """
    x = np.asarray(samples, dtype=np.float64)
    channels = 1 if x.ndim == 1 else x.shape[1]
    if bits not in (16, 24, 32):
        raise UnsupportedFormat(f"cannot encode {bits}-bit PCM")
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot encode non-finite samples")
    full = float(1 << (bits - 1))
    ints = np.clip(np.round(x * full), -full, full - 1).astype(np.int64).reshape(-1)
    if bits == 16:
        payload = ints.astype("<i2").tobytes()
    elif bits == 32:
        payload = ints.astype("<i4").tobytes()
    else:
        u = (ints & 0xFFFFFF).astype(np.uint32)
        payload = np.stack([u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
    width = bits // 8
    buf = io.BytesIO()
    buf.write(b"RIFF")
    buf.write(struct.pack("<I", 36 + len(payload) + (len(payload) & 1)))
    buf.write(b"WAVE")
    buf.write(b"fmt ")
    buf.write(struct.pack("<IHHIIHH", 16, _FORMAT_PCM, channels, sample_rate,
                          sample_rate * channels * width, channels * width, bits))
    buf.write(b"data")
    buf.write(struct.pack("<I", len(payload)))
    buf.write(payload)
    if len(payload) & 1:
        buf.write(b"\x00")
    return buf.getvalue()


def write_wav(path, samples, sample_rate: int, bits: int = 16) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_wav(samples, sample_rate, bits))


def resample_to_16k(clip: AudioClip) -> AudioClip:
    """Polyphase windowed-sinc resampling to 16 kHz; identity at 16 kHz."""
    if clip.sample_rate_hz == TARGET_RATE:
        return clip
    g = gcd(TARGET_RATE, clip.sample_rate_hz)
    up, down = TARGET_RATE // g, clip.sample_rate_hz // g
    y = resample_poly(clip.samples, up, down)
    return AudioClip(np.ascontiguousarray(y, dtype=np.float64), TARGET_RATE, clip.source_path)


# --------------------------------------------------------------------------
# Filename conventions


def parse_emodb_filename(name: str) -> UtteranceMeta:
    """Labels from an EMO-DB name such as ``03a01Fa.wav``."""
    m = _EMODB_RE.match(os.path.basename(name))
    if m is None:
        raise ManifestError(f"{name!r} does not follow the EMO-DB naming pattern")
    speaker = int(m.group(1))
    if speaker not in EMODB_SPEAKER_GENDER:
        raise ManifestError(f"{name!r}: unknown EMO-DB speaker {speaker}")
    code = m.group(4)
    if code not in EMODB_EMOTION_CODES:
        raise ManifestError(f"{name!r}: unknown EMO-DB emotion code {code!r}")
    statement = int(m.group(3)) + (0 if m.group(2) == "a" else 10)
    return UtteranceMeta(
        corpus_id=EMODB,
        emotion=EMODB_EMOTION_CODES[code],
        speaker_id=speaker,
        gender=EMODB_SPEAKER_GENDER[speaker],
        statement_id=statement,
    )


def _ravdess_fields(name: str) -> tuple:
    m = _RAVDESS_RE.match(os.path.basename(name))
    if m is None:
        raise ManifestError(f"{name!r} is not seven dash-separated two-digit fields")
    return tuple(int(g) for g in m.groups())


def parse_ravdess_filename(name: str) -> UtteranceMeta:
    """Labels from a RAVDESS name such as ``03-01-06-01-02-01-12.wav``.

    Fields: modality, vocal channel, emotion, intensity, statement,
    repetition, actor. Odd actors are male.
    """
    modality, channel, emotion, intensity, statement, repetition, actor = _ravdess_fields(name)
    if modality not in (1, 2, 3) or channel not in (1, 2):
        raise ManifestError(f"{name!r}: bad modality/vocal channel {modality:02d}-{channel:02d}")
    if emotion not in RAVDESS_EMOTION_CODES:
        raise ManifestError(f"{name!r}: emotion code {emotion:02d} out of range")
    if intensity not in RAVDESS_INTENSITY_CODES:
        raise ManifestError(f"{name!r}: intensity code {intensity:02d} out of range")
    if emotion == 1 and intensity == 2:
        raise ManifestError(f"{name!r}: neutral has no strong intensity")
    if statement not in (1, 2) or repetition not in (1, 2):
        raise ManifestError(f"{name!r}: statement/repetition out of range")
    if not 1 <= actor <= 24:
        raise ManifestError(f"{name!r}: actor {actor} out of range")
    return UtteranceMeta(
        corpus_id=RAVDESS,
        emotion=RAVDESS_EMOTION_CODES[emotion],
        speaker_id=actor,
        gender="male" if actor % 2 else "female",
        statement_id=statement,
        intensity=RAVDESS_INTENSITY_CODES[intensity],
    )


def _is_ravdess_speech(name: str) -> bool:
    try:
        fields = _ravdess_fields(name)
    except ManifestError:
        return True  # let the parser report it
    return fields[0] == 3 and fields[1] == 1


def build_manifest(root, corpus_id: str, intensity: Optional[str] = None) -> CorpusManifest:
    """Scan ``root`` recursively for labelled WAV files.

    Entries are sorted by path relative to ``root``. RAVDESS song and video
    files are skipped. Unparsable names are logged and skipped.
    """
    root = Path(root)
    if not root.is_dir() or not os.access(root, os.R_OK):
        raise OSError(f"cannot read corpus directory {root}")
    parser = {EMODB: parse_emodb_filename, RAVDESS: parse_ravdess_filename}.get(corpus_id)
    if parser is None:
        raise ManifestError(f"unknown corpus {corpus_id!r}")

    entries = []
    seen = set()
    for path in sorted(root.rglob("*"), key=lambda p: p.relative_to(root).as_posix()):
        if not path.is_file() or path.suffix.lower() != ".wav":
            continue
        if corpus_id == RAVDESS and not _is_ravdess_speech(path.name):
            continue
        try:
            meta = parser(path.name)
        except ManifestError as exc:
            logger.warning("skipping %s: %s", path, exc)
            continue
        key = str(path.resolve())
        if key in seen:
            continue
        seen.add(key)
        entries.append((meta, str(path)))

    if not entries:
        raise ManifestError(f"no parsable {corpus_id} files under {root}")
    manifest = CorpusManifest(corpus_id, entries)
    if intensity is not None:
        manifest = manifest.filter(intensity=intensity)
    logger.info("%s manifest: %d entries %s", corpus_id, len(manifest), manifest.emotion_counts())
    return manifest
