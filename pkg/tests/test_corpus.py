import hashlib
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import FIXTURES
from emoset.corpus import (
    EMODB,
    EMODB_EMOTION_CODES,
    EMODB_SPEAKER_GENDER,
    RAVDESS,
    RAVDESS_EMOTION_CODES,
    RAVDESS_INTENSITY_CODES,
    AudioClip,
    CorpusManifest,
    build_manifest,
    encode_wav,
    parse_emodb_filename,
    parse_ravdess_filename,
    parse_wav,
    read_manifest_rows,
    resample_to_16k,
    write_wav,
)
from emoset.exceptions import DecodeError, ManifestError, UnsupportedFormat
from emoset.synth import generate_corpus


def _wav_bytes(payload, fmt=1, channels=1, rate=16000, bits=16, extra_chunks=b""):
    block = channels * bits // 8
    fmt_chunk = struct.pack("<HHIIHH", fmt, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk + extra_chunks
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) % 2:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


# --------------------------------------------------------------------------
# WAV decoding


def test_single_full_scale_sample():
    clip = parse_wav(_wav_bytes(struct.pack("<h", 32767)))
    assert clip.samples.shape == (1,)
    assert clip.samples[0] == pytest.approx(32767 / 32768)


def test_zero_file_at_48k():
    clip = parse_wav(_wav_bytes(b"\x00\x00" * 480, rate=48000))
    assert clip.sample_rate_hz == 48000
    assert clip.samples.size == 480
    assert np.all(clip.samples == 0.0)


def test_stereo_mixed_by_mean():
    frames = np.array([[1000, -3000], [32767, 32767], [-32768, 0]], dtype="<i2")
    clip = parse_wav(_wav_bytes(frames.tobytes(), channels=2))
    np.testing.assert_array_equal(clip.samples, frames.astype(float).mean(axis=1) / 32768)


@pytest.mark.parametrize("bits,dtype", [(32, "<i4")])
def test_32bit_pcm_scaling(bits, dtype):
    vals = np.array([2 ** 31 - 1, -(2 ** 31), 12345], dtype=dtype)
    clip = parse_wav(_wav_bytes(vals.tobytes(), bits=bits))
    np.testing.assert_array_equal(clip.samples, vals.astype(float) / 2 ** 31)


def test_8bit_unsigned_pcm():
    clip = parse_wav(_wav_bytes(bytes([0, 128, 255]), bits=8))
    np.testing.assert_allclose(clip.samples, [-1.0, 0.0, 127 / 128])


def test_24bit_pcm():
    vals = [8388607, -8388608, -1, 1]
    payload = b"".join(v.to_bytes(3, "little", signed=True) for v in vals)
    clip = parse_wav(_wav_bytes(payload, bits=24))
    np.testing.assert_array_equal(clip.samples, np.array(vals) / 2 ** 23)


def test_float32_passthrough():
    vals = np.array([0.25, -0.5, 1.0], dtype="<f4")
    clip = parse_wav(_wav_bytes(vals.tobytes(), fmt=3, bits=32))
    np.testing.assert_array_equal(clip.samples, vals.astype(float))


def test_unknown_chunks_are_skipped():
    extra = b"LIST" + struct.pack("<I", 5) + b"abcde" + b"\x00"
    clip = parse_wav(_wav_bytes(struct.pack("<hh", 100, -100), extra_chunks=extra))
    assert clip.samples.size == 2


def test_compressed_format_rejected():
    with pytest.raises(UnsupportedFormat):
        parse_wav(_wav_bytes(b"\x00" * 4, fmt=2))


@pytest.mark.parametrize("data", [b"", b"JUNK" + b"\x00" * 40, b"RIFF\x10\x00\x00\x00WAVEfmt ", b"RIFF" + b"\x00" * 4 + b"AVI "])
def test_malformed_riff(data):
    with pytest.raises(DecodeError):
        parse_wav(data)


def test_big_endian_container_unsupported():
    with pytest.raises(UnsupportedFormat):
        parse_wav(b"RIFX" + b"\x00" * 40)


def test_missing_data_chunk():
    fmt_chunk = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
    body = b"WAVEfmt " + struct.pack("<I", 16) + fmt_chunk
    with pytest.raises(DecodeError):
        parse_wav(b"RIFF" + struct.pack("<I", len(body)) + body)


@settings(max_examples=50, deadline=None)
@given(arrays(np.int16, st.integers(1, 400)), st.sampled_from([16000, 22050, 44100, 48000]))
def test_encode_decode_roundtrip_16bit(ints, rate):
    samples = ints.astype(np.float64) / 32768.0
    clip = parse_wav(encode_wav(samples, rate))
    assert clip.sample_rate_hz == rate
    np.testing.assert_array_equal(np.round(clip.samples * 32768).astype(np.int16), ints)


def test_roundtrip_matches_stdlib_decoder(tmp_path):
    import wave

    rng = np.random.default_rng(1)
    stereo = rng.uniform(-0.9, 0.9, size=(4801, 2))
    path = tmp_path / "s.wav"
    write_wav(path, stereo, 48000)
    with wave.open(str(path)) as w:
        assert w.getnchannels() == 2 and w.getframerate() == 48000
        raw = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2").reshape(-1, 2)
    clip = parse_wav(path.read_bytes())
    assert abs(clip.samples.size - raw.shape[0]) <= 1
    np.testing.assert_allclose(clip.samples, raw.astype(float).mean(axis=1) / 32768, atol=0)


# --------------------------------------------------------------------------
# resampling


def test_resample_identity_at_16k():
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    out = resample_to_16k(AudioClip(x, 16000))
    np.testing.assert_array_equal(out.samples, x)
    assert out.sample_rate_hz == 16000


def test_resample_sine_spectrum():
    t = np.arange(48000) / 48000
    out = resample_to_16k(AudioClip(np.sin(2 * np.pi * 1000 * t), 48000)).samples
    assert out.size == 16000
    spec = np.abs(np.fft.rfft(out)) ** 2
    peak = int(np.argmax(spec))
    assert peak == 1000
    leak = spec.sum() - spec[peak]
    assert 10 * np.log10(spec[peak] / leak) >= 40


def test_resample_preserves_dc():
    out = resample_to_16k(AudioClip(np.full(48000, 0.5), 48000)).samples
    np.testing.assert_allclose(out[200:-200], 0.5, atol=1e-3)


@pytest.mark.parametrize("rate", [22050, 44100])
def test_resample_lengths(rate):
    out = resample_to_16k(AudioClip(np.zeros(rate), rate))
    assert abs(out.samples.size - 16000) <= 1


# --------------------------------------------------------------------------
# filename conventions


def test_label_tables_match_committed_checksum():
    doc = json.loads((FIXTURES / "label_maps.json").read_text())
    tables = {
        "emodb_emotion": dict(EMODB_EMOTION_CODES),
        "emodb_speaker_gender": {str(k): v for k, v in EMODB_SPEAKER_GENDER.items()},
        "ravdess_emotion": {str(k): v for k, v in RAVDESS_EMOTION_CODES.items()},
        "ravdess_intensity": {str(k): v for k, v in RAVDESS_INTENSITY_CODES.items()},
    }
    digest = hashlib.sha256(json.dumps(tables, sort_keys=True).encode()).hexdigest()
    assert tables == doc["tables"]
    assert digest == doc["sha256"]


@pytest.mark.parametrize("example", json.loads((FIXTURES / "label_maps.json").read_text())["examples"])
def test_documented_filename_examples(example):
    parse = parse_emodb_filename if example["corpus"] == EMODB else parse_ravdess_filename
    meta = parse(example["name"])
    assert meta.speaker_id == example["speaker"]
    assert meta.emotion == example["emotion"]
    assert meta.gender == example["gender"]
    if "intensity" in example:
        assert meta.intensity == example["intensity"]


def test_roster_balance():
    genders = list(EMODB_SPEAKER_GENDER.values())
    assert genders.count("male") == genders.count("female") == 5
    ravdess = [parse_ravdess_filename(f"03-01-02-01-01-01-{a:02d}.wav").gender for a in range(1, 25)]
    assert ravdess.count("male") == ravdess.count("female") == 12


@pytest.mark.parametrize("name", ["03a01Xa.wav", "04a01Fa.wav", "3a01Fa.wav", "03a01Fa.mp3", "03c01Fa.wav"])
def test_bad_emodb_names(name):
    with pytest.raises(ManifestError):
        parse_emodb_filename(name)


@pytest.mark.parametrize("name", [
    "03-01-09-01-01-01-01.wav",
    "03-01-01-02-01-01-01.wav",  # neutral has no strong intensity
    "03-01-05-03-01-01-01.wav",
    "03-01-05-01-01-01-25.wav",
    "03-01-05-01-01-01.wav",
    "03-01-05-01-01-01-01-01.wav",
])
def test_bad_ravdess_names(name):
    with pytest.raises(ManifestError):
        parse_ravdess_filename(name)


@settings(max_examples=300)
@given(st.text(alphabet="0123456789-abWLEAFTNXwav.", max_size=30))
def test_filename_parsers_are_total(name):
    for parse in (parse_emodb_filename, parse_ravdess_filename):
        try:
            meta = parse(name)
        except ManifestError:
            continue
        assert meta.emotion and meta.gender in ("male", "female") and meta.speaker_id > 0


# --------------------------------------------------------------------------
# manifests


def test_empty_directory(tmp_path):
    with pytest.raises(ManifestError):
        build_manifest(tmp_path, EMODB)


def test_missing_directory(tmp_path):
    with pytest.raises(OSError):
        build_manifest(tmp_path / "nope", EMODB)


def test_ravdess_manifest_histogram_and_filters(tmp_path):
    # two actors, both statements, all emotions at normal intensity plus strong copies
    generate_corpus(tmp_path, RAVDESS, speakers=(1, 2), statements=(1,), duration_s=0.2)
    for p in sorted(tmp_path.rglob("*.wav")):
        fields = p.name.split("-")
        if fields[2] != "01":
            fields[3] = "02"
            p.with_name("-".join(fields)).write_bytes(p.read_bytes())
    (tmp_path / "Actor_01" / "03-02-05-01-01-01-01.wav").write_bytes(b"song")  # song: excluded
    (tmp_path / "Actor_01" / "notes.txt").write_text("x")
    (tmp_path / "Actor_01" / "garbage.wav").write_bytes(b"x")  # unparsable: skipped

    manifest = build_manifest(tmp_path, RAVDESS)
    counts = manifest.emotion_counts()
    assert counts["neutral"] * 2 == counts["anger"] == counts["surprise"] == 4
    assert len(manifest.filter(intensity="normal")) == 16
    assert len(manifest.filter(gender="female")) == len(manifest) // 2
    rel = [p for p in manifest.paths]
    assert rel == sorted(rel)
    assert len(set(rel)) == len(rel)


def test_manifest_csv_roundtrip(tmp_path):
    generate_corpus(tmp_path / "c", EMODB, speakers=(3, 8), emotions=("anger", "sadness"), statements=(1,),
                    duration_s=0.2)
    manifest = build_manifest(tmp_path / "c", EMODB)
    path = tmp_path / "m.csv"
    manifest.to_csv(path)
    text = path.read_bytes()
    assert b"\r\n" not in text
    assert text.splitlines()[0] == b"path,corpus,emotion,speaker,gender,intensity,statement"
    back = CorpusManifest.from_csv(path)
    assert back.corpus_id == EMODB
    assert back.entries == manifest.entries
    with open(path, encoding="utf-8", newline="") as fh:
        assert len(read_manifest_rows(fh)) == 4
