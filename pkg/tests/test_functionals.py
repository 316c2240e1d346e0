import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emoset.exceptions import ArgumentError
from emoset.functionals import (
    FUNCTIONALS,
    LAYOUT,
    N_FEATURES,
    PITCH_FUNCTIONALS,
    apply_functionals,
    assemble_feature_vector,
    feature_names,
    functional,
    pitch_onsets_and_duration,
)
from emoset.lld import LLD_NAMES, LldMatrix
from oracles import brute_functionals

_ORDER_FREE = {"maxPos", "minPos", "linregc1", "linregc2", "linregerrQ"}


def test_all_functionals_match_brute_force():
    track = np.random.default_rng(0).standard_normal(500) * 3 + 1
    ref = brute_functionals(track)
    out = apply_functionals(track)[0]
    for j, name in enumerate(FUNCTIONALS):
        assert out[j] == pytest.approx(ref[name], abs=1e-9, rel=1e-9), name


def test_columns_are_independent():
    X = np.random.default_rng(1).standard_normal((50, 4))
    out = apply_functionals(X)
    for j in range(4):
        np.testing.assert_allclose(out[j], apply_functionals(X[:, j])[0], rtol=1e-12, atol=1e-14)


def test_small_examples():
    assert functional([1, 2, 3], "amean") == 2.0
    t = np.arange(40.0)
    assert functional(2 * t + 1, "linregc1") == pytest.approx(2.0, abs=1e-12)
    assert functional(2 * t + 1, "linregc2") == pytest.approx(1.0, abs=1e-12)
    assert functional(2 * t + 1, "linregerrQ") == pytest.approx(0.0, abs=1e-20)
    assert functional([5, 1, 9, 1], "minPos") == 1 / 3
    assert functional([5, 1, 9, 1], "maxPos") == 2 / 3


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-100, 100)))
def test_symmetric_sequence_has_zero_skew(half):
    x = np.concatenate([half, -half]) + 3.0
    assert functional(x, "skewness") == pytest.approx(0.0, abs=1e-9)


def test_length_one_track():
    out = dict(zip(FUNCTIONALS, apply_functionals(np.array([4.5]))[0]))
    for name in ("stddev", "skewness", "kurtosis", "range", "maxPos", "minPos", "iqr1-3",
                 "pctlrange0-1", "linregc1", "linregerrQ"):
        assert out[name] == 0.0, name
    assert out["linregc2"] == 4.5 and out["amean"] == 4.5 and out["quartile2"] == 4.5


def test_empty_and_unknown():
    with pytest.raises(ArgumentError):
        apply_functionals(np.zeros((0, 2)))
    with pytest.raises(ArgumentError):
        functional([1.0], "median")


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 60), elements=st.floats(-1e3, 1e3)), st.randoms())
def test_order_statistics_permutation_invariant(x, rnd):
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    a = dict(zip(FUNCTIONALS, apply_functionals(x)[0]))
    b = dict(zip(FUNCTIONALS, apply_functionals(x[perm])[0]))
    for name in FUNCTIONALS:
        if name not in _ORDER_FREE:
            assert a[name] == pytest.approx(b[name], abs=1e-9 * (1 + np.abs(x).max()) ** 4), name


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(-1e3, 1e3)))
def test_quantile_ordering(x):
    f = dict(zip(FUNCTIONALS, apply_functionals(x)[0]))
    eps = 1e-9 * (1 + np.abs(x).max())
    chain = ["min", "percentile1.0", "quartile1", "quartile2", "quartile3", "percentile99.0", "max"]
    for lo, hi in zip(chain, chain[1:]):
        assert f[lo] <= f[hi] + eps
    assert f["stddev"] >= 0 and f["linregerrQ"] >= -eps
    assert 0 <= f["maxPos"] <= 1 and 0 <= f["minPos"] <= 1


# --------------------------------------------------------------------------
# onsets and duration


def test_onsets_examples():
    assert pitch_onsets_and_duration(np.full(100, 150.0), 0.01) == (1, pytest.approx(1.0))
    assert pitch_onsets_and_duration(np.zeros(30), 0.01)[0] == 0
    f0 = np.zeros(60)
    f0[10:21] = 120.0
    f0[40:51] = 130.0
    assert pitch_onsets_and_duration(f0, 0.01) == (2, pytest.approx(0.6))


# --------------------------------------------------------------------------
# layout


def _llds(values, deltas=None):
    deltas = np.zeros_like(values) if deltas is None else deltas
    return LldMatrix(values, deltas, np.arange(len(values)) * 0.01)


def test_feature_layout():
    assert N_FEATURES == 1582 == 68 * 21 + 8 * 19 + 2
    assert LAYOUT.ranges == ((0, 1428), (1428, 1580), (1580, 1582))
    names = feature_names()
    assert len(names) == 1582 == len(set(names))
    assert names[0] == "loudness_amean"
    assert names[34 * 21] == "loudness_de_amean"
    assert names[1428] == "f0Final_amean"
    assert names[-2:] == ["F0final_nOnsets", "duration"]
    assert len(PITCH_FUNCTIONALS) == 19


def test_vector_indices():
    rng = np.random.default_rng(5)
    values = rng.standard_normal((80, 38))
    values[:, 34] = np.where(values[:, 34] > 0, 100 + values[:, 34], 0.0)
    deltas = rng.standard_normal((80, 38))
    vec = assemble_feature_vector(_llds(values, deltas), 0.01).values
    assert vec.shape == (1582,)
    # mfcc3 is trajectory 4
    np.testing.assert_allclose(vec[4 * 21:5 * 21], apply_functionals(values[:, 4])[0])
    # delta of voicingProb is trajectory 34 + 33
    np.testing.assert_allclose(vec[67 * 21:68 * 21], apply_functionals(deltas[:, 33])[0])
    # jitterLocal is pitch trajectory 1
    np.testing.assert_allclose(vec[1428 + 19:1428 + 38], apply_functionals(values[:, 35], PITCH_FUNCTIONALS)[0])
    np.testing.assert_allclose(vec[1428 + 7 * 19:1580], apply_functionals(deltas[:, 37], PITCH_FUNCTIONALS)[0])
    assert vec[1580] == pitch_onsets_and_duration(values[:, 34], 0.01)[0]
    assert vec[1581] == pytest.approx(0.8)


def test_identical_input_is_bit_identical():
    values = np.random.default_rng(6).standard_normal((40, 38))
    a = assemble_feature_vector(_llds(values.copy()), 0.01).values
    b = assemble_feature_vector(_llds(values.copy()), 0.01).values
    assert a.tobytes() == b.tobytes()


def test_constant_llds_zero_dispersion():
    values = np.tile(np.linspace(-2, 3, 38), (25, 1))
    vec = assemble_feature_vector(_llds(values), 0.01).values
    block = vec[:1428].reshape(68, 21)
    for j, name in enumerate(FUNCTIONALS):
        if name in ("stddev", "skewness", "kurtosis", "range", "maxPos", "minPos", "iqr1-2", "iqr2-3",
                    "iqr1-3", "pctlrange0-1", "linregc1", "linregerrQ"):
            np.testing.assert_array_equal(block[:, j], 0.0)
    np.testing.assert_allclose(block[:34, 0], values[0, :34])
    np.testing.assert_allclose(block[:34, FUNCTIONALS.index("linregc2")], values[0, :34])
    assert np.all(np.isfinite(vec))


def test_lld_names_consistent():
    assert len(LLD_NAMES) == 38
