import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctilab import zigbee_phy
from ctilab.signal_core import (
    IqWaveform,
    NoiseSpec,
    RateMismatchError,
    add_awgn,
    add_waveforms,
    autocorrelation,
    frequency_shift,
    low_pass_filter,
    lowpass_taps,
    phase_shift_series,
    read_iq32,
    resample_at,
    rssi_series,
    scale,
    write_iq32,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def waveforms(draw, min_size=2, max_size=200, rate=4e6):
    n = draw(st.integers(min_size, max_size))
    re = draw(arrays(np.float64, n, elements=finite))
    im = draw(arrays(np.float64, n, elements=finite))
    return IqWaveform(re + 1j * im, rate)


def power_meter(x):
    """Independent mean-power oracle: explicit sum of I^2 + Q^2."""
    return sum(float(v.real) ** 2 + float(v.imag) ** 2 for v in x) / len(x)


def test_waveform_validates_rate_and_finiteness():
    with pytest.raises(ValueError):
        IqWaveform(np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        IqWaveform(np.array([np.nan]), 1.0)
    w = IqWaveform(np.ones(4), 2.0)
    assert len(w) == 4 and w.duration_s == 2.0
    with pytest.raises(ValueError):
        w.samples[0] = 5


def test_add_waveforms_identity_and_inverse():
    a = IqWaveform(np.array([1 + 0j, 0 + 1j]), 1.0)
    z = IqWaveform(np.zeros(2, complex), 1.0)
    assert np.array_equal(add_waveforms(a, z).samples, a.samples)
    b = IqWaveform(np.array([1 + 1j]), 1.0)
    c = IqWaveform(np.array([-1 - 1j]), 1.0)
    assert np.array_equal(add_waveforms(b, c).samples, [0j])


def test_add_waveforms_doubles_a_symbol_elementwise():
    w = zigbee_phy.modulate_chips(zigbee_phy.PN_TABLE.sequences[3]).slice(0, 64)
    s = add_waveforms(w, w).samples
    for i in range(64):
        assert s[i] == w.samples[i] * 2


def test_add_waveforms_pads_tail_and_rejects_rate_mismatch():
    a = IqWaveform(np.ones(3), 1.0)
    b = IqWaveform(np.ones(1), 1.0)
    assert np.array_equal(add_waveforms(a, b).samples, [2, 1, 1])
    with pytest.raises(RateMismatchError):
        add_waveforms(a, IqWaveform(np.ones(3), 2.0))


def test_scale_examples():
    w = IqWaveform(np.array([1 + 0j, 2 - 1j]), 1.0)
    assert scale(w, 1).equals(w)
    assert scale(IqWaveform(np.array([1 + 0j]), 1.0), 1j).samples[0] == 1j
    unit = zigbee_phy.modulate(zigbee_phy.build_frame(b"abc"))
    unit = unit.with_samples(unit.samples / np.sqrt(power_meter(unit.samples)))
    assert abs(power_meter(scale(unit, 0.5).samples) - 0.25) < 1e-12
    with pytest.raises(ValueError):
        scale(w, np.inf)


def test_awgn_examples():
    w = IqWaveform(np.ones(8, complex), 1.0)
    assert add_awgn(w, NoiseSpec(0.0, 9)).equals(w)
    n = add_awgn(IqWaveform(np.zeros(10**6, complex), 1.0), NoiseSpec(1.0, 4)).samples
    assert abs(np.var(n.real) - 1) < 0.01 and abs(np.var(n.imag) - 1) < 0.01
    assert add_awgn(w, NoiseSpec(0.3, 77)).equals(add_awgn(w, NoiseSpec(0.3, 77)))
    assert not add_awgn(w, NoiseSpec(0.3, 77)).equals(add_awgn(w, NoiseSpec(0.3, 78)))


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0, 0)
    with pytest.raises(ValueError):
        NoiseSpec(1.0, 2**64)


def test_frequency_shift_examples():
    w = IqWaveform(np.ones(8, complex), 4.0)
    assert frequency_shift(w, 0).equals(w)
    np.testing.assert_allclose(frequency_shift(w, 1.0).samples[:4], [1, 1j, -1, -1j], atol=1e-12)
    with pytest.raises(ValueError):
        frequency_shift(w, 2.0)


def test_low_pass_filter_passes_dc_and_rejects_twice_cutoff():
    fs, fc = 22e6, 2e6
    dc = low_pass_filter(IqWaveform(np.ones(2000, complex), fs), fc).samples
    np.testing.assert_allclose(dc[100:-100], 1.0, rtol=0.01)
    n = np.arange(20000)
    tone = IqWaveform(np.exp(2j * np.pi * 2 * fc * n / fs), fs)
    out = low_pass_filter(tone, fc).samples[100:-100]
    assert power_meter(out) < 0.01 * power_meter(tone.samples[100:-100])


def test_low_pass_filter_design_and_validation():
    taps = lowpass_taps(2e6, 22e6)
    assert taps.size == 63
    np.testing.assert_allclose(taps, taps[::-1])  # linear phase
    with pytest.raises(ValueError):
        low_pass_filter(IqWaveform(np.ones(4), 22e6), 11e6)
    with pytest.raises(ValueError):
        low_pass_filter(IqWaveform(np.ones(4), 22e6), 0.0)


def test_low_pass_filter_group_delay_is_compensated():
    fs = 22e6
    x = np.zeros(400, complex)
    x[200] = 1
    y = low_pass_filter(IqWaveform(x, fs), 2e6).samples
    assert int(np.argmax(np.abs(y))) == 200


def test_rssi_and_phase_examples():
    assert rssi_series(IqWaveform(np.array([3 + 4j]), 1.0))[0] == 25
    assert np.all(phase_shift_series(IqWaveform(np.full(5, 2 + 1j), 1.0)) == 0)
    rot = IqWaveform(np.array([1, 1j, -1, -1j, 1]), 1.0)
    np.testing.assert_allclose(phase_shift_series(rot), np.pi / 2)
    with pytest.raises(ValueError):
        phase_shift_series(IqWaveform(np.ones(1), 1.0))


def test_phase_shift_range_is_half_open():
    w = IqWaveform(np.array([1, -1, 1], complex), 1.0)
    assert np.all(phase_shift_series(w) == np.pi)


def test_clean_zigbee_envelope_and_phase():
    w = zigbee_phy.modulate(zigbee_phy.build_frame(bytes(range(30))))
    r = rssi_series(w)[4:-4]
    assert r.max() / r.min() < 1.000001
    ps = phase_shift_series(w)[4:-4]
    np.testing.assert_allclose(np.abs(ps), np.pi / 4, atol=1e-6)


def test_autocorrelation_examples(rng):
    sq = np.tile([1.0] * 4 + [-1.0] * 4, 64)
    assert autocorrelation(sq, 16).values[7] > 0.9
    white = rng.standard_normal(4096)
    assert np.all(np.abs(autocorrelation(white, 64).values) < 0.1)
    const = autocorrelation(np.full(100, 3.0), 10)
    assert const.degenerate and np.all(const.values == 0)
    with pytest.raises(ValueError):
        autocorrelation(np.ones(10), 6)
    with pytest.raises(ValueError):
        autocorrelation(np.ones(10), 0)


def test_autocorrelation_matches_direct_formula(rng):
    x = rng.standard_normal(300)
    got = autocorrelation(x, 20).values
    d = x - x.mean()
    want = [np.dot(d[:-k], d[k:]) / np.dot(d, d) for k in range(1, 21)]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_resample_at_reproduces_band_limited_signal():
    fs = 22e6
    n = np.arange(4000)
    x = np.exp(2j * np.pi * 0.3e6 * n / fs)
    t = (np.arange(500) + 0.37) / 4e6 + 200 / fs
    y = resample_at(IqWaveform(x, fs), t, 4e6).samples
    np.testing.assert_allclose(y, np.exp(2j * np.pi * 0.3e6 * t), atol=1e-6)


def test_iq32_round_trip(tmp_path):
    w = IqWaveform(np.array([1 + 2j, -0.5 + 0.25j, 3.0 - 1j]), 4e6)
    p = write_iq32(tmp_path / "a.iq32", w, "demo")
    assert p.stat().st_size == 3 * 8
    back, desc = read_iq32(p)
    assert desc == "demo" and back.sample_rate_hz == 4e6
    np.testing.assert_array_equal(back.samples, w.samples)
    raw = np.frombuffer(p.read_bytes(), "<f4")
    np.testing.assert_array_equal(raw[:4], [1, 2, -0.5, 0.25])


# --- properties -------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(waveforms(min_size=70, max_size=300), waveforms(min_size=70, max_size=300))
def test_lpf_linearity(a, b):
    lhs = low_pass_filter(add_waveforms(a, b), 1e6).samples
    n = max(len(a), len(b))
    pa = np.pad(a.samples, (0, n - len(a)))
    pb = np.pad(b.samples, (0, n - len(b)))
    rhs = low_pass_filter(IqWaveform(pa, 4e6), 1e6).samples + low_pass_filter(IqWaveform(pb, 4e6), 1e6).samples
    assert np.max(np.abs(lhs - rhs)) < 1e-9 * max(1.0, np.max(np.abs(lhs)))


@settings(max_examples=40, deadline=None)
@given(waveforms(), st.floats(-1.9e6, 1.9e6))
def test_frequency_shift_is_unitary(w, f):
    r0, r1 = rssi_series(w), rssi_series(frequency_shift(w, f))
    np.testing.assert_allclose(r1, r0, rtol=1e-12, atol=1e-12 * max(1.0, r0.max()))


@settings(max_examples=40, deadline=None)
@given(waveforms(), finite, finite)
def test_rssi_scales_with_gain_squared(w, gr, gi):
    g = complex(gr, gi)
    r0, r1 = rssi_series(w), rssi_series(scale(w, g))
    np.testing.assert_allclose(r1, abs(g) ** 2 * r0, rtol=1e-12, atol=1e-300)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.01, 100), st.floats(0, 2 * np.pi))
def test_phase_shift_invariant_under_gain(seed, mag, ang):
    r = np.random.default_rng(seed)
    w = IqWaveform(r.standard_normal(64) + 1j * r.standard_normal(64), 4e6)
    g = mag * np.exp(1j * ang)
    d = np.angle(np.exp(1j * (phase_shift_series(scale(w, g)) - phase_shift_series(w))))
    assert np.max(np.abs(d)) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63), st.floats(0, 4))
def test_noise_determinism(seed, var):
    w = IqWaveform(np.zeros(32, complex), 1.0)
    assert add_awgn(w, NoiseSpec(var, seed)).equals(add_awgn(w, NoiseSpec(var, seed)))
