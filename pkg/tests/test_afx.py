import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypafx import afx, dataset
from hypafx.afx import AfxChain, EffectSpec
from hypafx.errors import UsageError

SR = 44100


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


@pytest.fixture(scope="module")
def pluck():
    return dataset.karplus_strong_clip(np.random.default_rng(3))[0][: SR * 2]


# ---- enumeration ---------------------------------------------------------

def brute_force_chains(kinds, L):
    out = set()
    for length in range(L + 1):
        for seq in itertools.product(kinds, repeat=length):
            if len(set(seq)) == length:
                out.add(seq)
    return out


@pytest.mark.parametrize("F", range(1, 6))
def test_enumeration_count_matches_formula_and_brute_force(F):
    kinds = [f"k{i}" for i in range(F)]
    for L in range(F + 1):
        chains = afx.enumerate_chains(kinds, L)
        assert len(chains) == sum(math.factorial(F) // math.factorial(F - l) for l in range(L + 1))
        assert set(chains) == brute_force_chains(kinds, L)
        assert len(set(chains)) == len(chains)


def test_enumeration_examples():
    assert len(afx.enumerate_chains(afx.KINDS, 3)) == 16
    assert afx.enumerate_chains(["a", "b"], 2) == [(), ("a",), ("b",), ("a", "b"), ("b", "a")]
    assert len(afx.enumerate_chains(list("abcd"), 4)) == 1 + 4 + 12 + 24 + 24 == 65


def test_vocabulary_bijection():
    vocab = afx.ChainVocabulary()
    for i, ch in enumerate(vocab.chains):
        assert vocab.index(ch) == i
        assert vocab.chain(i) == ch
        assert afx.parse_key(afx.chain_key(ch)) == ch
    with pytest.raises(UsageError):
        vocab.index(("delay", "delay"))
    with pytest.raises(UsageError):
        vocab.chain(16)


def test_enumeration_rejects_bad_arguments():
    with pytest.raises(UsageError):
        afx.enumerate_chains(["a", "a"], 1)
    with pytest.raises(UsageError):
        afx.enumerate_chains(["a", "b"], 3)


# ---- parameters ----------------------------------------------------------

def test_distortion_drive_range():
    rng = np.random.default_rng(0)
    drives = [afx.sample_params(["distortion"], rng).effects[0].params["drive_db"] for _ in range(10_000)]
    assert 5.0 <= min(drives) and max(drives) <= 15.0


def test_sample_params_determinism_and_empty():
    a = afx.sample_params(["delay", "chorus"], np.random.default_rng(5))
    b = afx.sample_params(["delay", "chorus"], np.random.default_rng(5))
    assert [e.to_dict() for e in a.effects] == [e.to_dict() for e in b.effects]
    assert len(afx.sample_params([], np.random.default_rng(5))) == 0


def test_effect_spec_validation():
    with pytest.raises(UsageError):
        EffectSpec("reverb")
    with pytest.raises(UsageError):
        EffectSpec("delay", {"delay_seconds": 3.0})
    with pytest.raises(UsageError):
        EffectSpec("delay", {"bogus": 1.0})
    with pytest.warns(UserWarning):
        assert EffectSpec("delay", {"feedback": 0.99}).params["feedback"] == afx.FEEDBACK_CAP
    with pytest.raises(UsageError):
        AfxChain([EffectSpec("delay"), EffectSpec("delay")])


# ---- DSP -----------------------------------------------------------------

def test_distortion_examples():
    x = np.linspace(-1, 1, 101)
    np.testing.assert_array_equal(afx.apply_distortion(np.zeros(5), EffectSpec("distortion", {"drive_db": 12})), 0.0)
    np.testing.assert_allclose(afx.apply_distortion(x, EffectSpec("distortion", {"drive_db": 0})), np.tanh(x), atol=1e-15)
    y = afx.apply_distortion(np.array([0.5]), EffectSpec("distortion", {"drive_db": 15}))
    assert y[0] == pytest.approx(np.tanh(10 ** 0.75 * 0.5), abs=1e-12)
    assert y[0] == pytest.approx(np.tanh(2.8117), abs=1e-5)      # 0.99280


def test_delay_impulse_responses():
    n, D = 2000, 300
    imp = np.zeros(n)
    imp[0] = 1.0
    y = afx.apply_delay(imp, EffectSpec("delay", {"delay_seconds": D / SR, "feedback": 0.0, "mix": 0.5}))
    expect = np.zeros(n)
    expect[0], expect[D] = 0.5, 0.5
    np.testing.assert_allclose(y, expect, atol=1e-12)
    y = afx.apply_delay(imp, EffectSpec("delay", {"delay_seconds": D / SR, "feedback": 0.5, "mix": 0.5}))
    expect = np.zeros(n)
    expect[0] = 0.5
    for k in range((n - 1) // D):
        expect[(k + 1) * D] = 0.5 * 0.5 ** k
    np.testing.assert_allclose(y, expect, atol=1e-6)


def test_zero_mix_is_identity(pluck):
    x = pluck[:5000]
    np.testing.assert_array_equal(afx.apply_delay(x, EffectSpec("delay", {"mix": 0.0, "feedback": 0.5})), x)
    np.testing.assert_array_equal(afx.apply_chorus(x, EffectSpec("chorus", {"mix": 0.0, "depth": 0.7})), x)


def test_chorus_depth_zero_is_a_fixed_delay():
    t = np.arange(SR) / SR
    x = 0.5 * np.sin(2 * np.pi * 220 * t)
    chorus = afx.apply_chorus(x, EffectSpec("chorus", {"depth": 0.0, "feedback": 0.0, "centre_delay_ms": 10.0, "mix": 0.5}))
    delay = afx.apply_delay(x, EffectSpec("delay", {"delay_seconds": 0.01, "feedback": 0.0, "mix": 0.5}))
    assert rms(chorus - delay) <= 1e-3


def test_chorus_fractional_delay_interpolates():
    # 7 ms is 308.7 samples: the wet path is the linear interpolation of two neighbours
    x = np.random.default_rng(1).normal(size=2000)
    y = afx.apply_chorus(x, EffectSpec("chorus", {"depth": 0.0, "mix": 1.0}))
    # y[i] = x(i - 308.7) = 0.7 x[i - 309] + 0.3 x[i - 308]
    expect = np.zeros_like(x)
    expect[309:] = 0.7 * x[:-309] + 0.3 * x[1:x.size - 308]
    np.testing.assert_allclose(y[400:], expect[400:], atol=1e-9)


def test_chorus_creates_sidebands():
    t = np.arange(4 * SR) / SR
    x = 0.5 * np.sin(2 * np.pi * 440 * t)
    y = afx.apply_chorus(x, EffectSpec("chorus", {"depth": 1.0, "rate_hz": 1.0, "mix": 0.5}))

    def off_tone_fraction(s):
        s = s[SR:]
        spec = np.abs(np.fft.rfft(s * np.hanning(s.size))) ** 2
        f = np.fft.rfftfreq(s.size, 1 / SR)
        return spec[np.abs(f - 440) > 3].sum() / spec.sum()

    assert off_tone_fraction(y) > 100 * off_tone_fraction(x)


def test_order_sensitivity_and_delay_commutation(pluck):
    dist = EffectSpec("distortion", {"drive_db": 10})
    cho = EffectSpec("chorus", {"rate_hz": 1.0, "depth": 0.5, "feedback": 0.2})
    dly = EffectSpec("delay", {"delay_seconds": 0.2, "feedback": 0.3})
    for other in (cho, dly):
        a = afx.apply_chain(pluck, AfxChain([dist, other]))
        b = afx.apply_chain(pluck, AfxChain([other, dist]))
        assert rms(a - b) / rms(a) >= 1e-2
    d1 = EffectSpec("delay", {"delay_seconds": 0.11, "feedback": 0.4, "mix": 0.6})
    d2 = EffectSpec("delay", {"delay_seconds": 0.27, "feedback": 0.2, "mix": 0.3})
    x = 0.3 * pluck
    ab = afx.apply_delay(afx.apply_delay(x, d1), d2)
    ba = afx.apply_delay(afx.apply_delay(x, d2), d1)
    assert rms(ab - ba) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 4000), k=st.integers(0, 15))
def test_effects_preserve_length_and_stay_finite(seed, n, k):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, n)
    chain = afx.sample_params(afx.ChainVocabulary().chain(k), rng)
    y, gain = afx.render_chain(x, chain)
    assert y.shape == x.shape and np.all(np.isfinite(y))
    assert np.max(np.abs(y)) <= 1.0 + 1e-12 and 0 < gain <= 1.0
    y2, _ = afx.render_chain(x, chain)
    np.testing.assert_array_equal(y, y2)


def test_empty_chain_is_identity(pluck):
    np.testing.assert_array_equal(afx.apply_chain(pluck, AfxChain([])), pluck)


# ---- chain strings -------------------------------------------------------

def test_chain_string_round_trip():
    text = "distortion:drive_db=10>chorus:rate_hz=0.8,depth=0.5"
    chain = afx.parse_chain(text)
    assert chain.kinds == ("distortion", "chorus")
    assert chain.effects[1].params["rate_hz"] == 0.8
    again = afx.parse_chain(afx.format_chain(chain))
    assert [e.to_dict() for e in again.effects] == [e.to_dict() for e in chain.effects]
    assert len(afx.parse_chain("")) == 0


@pytest.mark.parametrize("text,pos", [("reverb", "position 0"), ("delay>reverb", "position 6"),
                                      ("delay:fb=1", "position 6"), ("delay:mix=x", "position 6")])
def test_chain_string_errors_name_positions(text, pos):
    with pytest.raises(UsageError, match=pos):
        afx.parse_chain(text)
