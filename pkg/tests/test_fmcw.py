import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from echokws import fmcw
from echokws.audio import AudioBuffer, apply_filter, band_energy_fraction
from echokws.fmcw import ChirpSpec, EchoProfile

LOW = ChirpSpec(17000.0, 20000.0)
HIGH = ChirpSpec(20500.0, 23500.0, amplitude=0.4)
LOW4 = ChirpSpec(17000.0, 20000.0, amplitude=0.4)


def naive_profile(x, template, window):
    """Direct O(n^2) circular sliding dot product r[s] = sum_n x[n+s] c[n]."""
    L = template.size
    frames = x.size // L
    lo, hi = window
    out = np.zeros((hi - lo + 1, frames))
    for f in range(frames):
        seg = x[f * L:(f + 1) * L]
        for s in range(lo, hi + 1):
            out[s - lo, f] = abs(sum(seg[(n + s) % L] * template[n] for n in range(L)))
    return out


def test_chirp_length_and_phase():
    c = fmcw.generate_chirp(LOW)
    assert len(c) == 576
    t = np.arange(576) / 48000
    expected = np.sin(2 * np.pi * (17000 * t + 3000 * t ** 2 / (2 * 0.012)))
    assert np.allclose(c.samples[0], expected)


def test_chirp_energy_confined_to_band():
    c = fmcw.generate_chirp(HIGH)
    frac = band_energy_fraction(c, 20500, 23500)
    assert frac >= 0.95
    assert frac == pytest.approx(0.96223, abs=1e-4)


def test_degenerate_chirp_is_tone():
    c = fmcw.generate_chirp(ChirpSpec(1000.0, 1000.0, 0.012))
    t = np.arange(576) / 48000
    assert np.allclose(c.samples[0], np.sin(2 * np.pi * 1000 * t))


def test_instantaneous_frequency_sweeps():
    spec = ChirpSpec(17000.0, 20000.0, 0.012, 48000)
    c = fmcw.generate_chirp(spec).samples[0]
    # Analytic-signal phase slope at the start and end of the chirp.
    from scipy.signal import hilbert
    phase = np.unwrap(np.angle(hilbert(np.tile(c, 3))))[576:1152]
    inst = np.diff(phase) * 48000 / (2 * np.pi)
    assert abs(np.median(inst[20:60]) - 17000 - 3000 * 40 / 576) < 300
    assert abs(np.median(inst[-60:-20]) - 20000 + 3000 * 40 / 576) < 300


@pytest.mark.parametrize("spec", [ChirpSpec(20000, 17000), ChirpSpec(17000, 25000), ChirpSpec(17000, 20000, 0.0120001)])
def test_invalid_chirp(spec):
    with pytest.raises(ValueError):
        fmcw.generate_chirp(spec)


def test_stream_periodic_and_identity():
    s = fmcw.generate_fmcw_stream(LOW, 3)
    assert len(s) == 1728
    assert np.array_equal(s.samples[0, :576], s.samples[0, 576:1152])
    assert np.array_equal(fmcw.generate_fmcw_stream(LOW, 1).samples, fmcw.generate_chirp(LOW).samples)
    with pytest.raises(ValueError):
        fmcw.generate_fmcw_stream(LOW, 0)


@pytest.mark.parametrize("k", [0, 5, 11, 60, 119])
def test_profile_peak_at_delay(k):
    c = fmcw.generate_chirp(LOW).samples[0]
    rx = AudioBuffer(np.roll(c, k), 48000)
    prof = fmcw.compute_echo_profile(rx, LOW, (0, 119))
    assert prof.values.shape == (1, 120, 1)
    assert int(np.argmax(prof.values[0, :, 0])) == k
    oracle = naive_profile(rx.samples[0], c, (0, 119))
    assert int(np.argmax(oracle[:, 0])) == k


def test_profile_zero_and_scaling():
    z = fmcw.compute_echo_profile(AudioBuffer(np.zeros(1152), 48000), LOW)
    assert not z.values.any() and z.n_frames == 2
    c = np.roll(fmcw.generate_chirp(LOW).samples[0], 7)
    one = fmcw.compute_echo_profile(AudioBuffer(c, 48000), LOW).values
    half = fmcw.compute_echo_profile(AudioBuffer(0.5 * c, 48000), LOW).values
    assert np.allclose(half, 0.5 * one)


@given(st.integers(0, 2**32 - 1), st.integers(0, 400), st.integers(0, 175))
def test_profile_matches_naive_oracle(seed, lo, width):
    r = np.random.default_rng(seed)
    x = r.standard_normal(2 * 576 + int(r.integers(0, 576)))
    hi = min(lo + width, 575)
    fast = fmcw.compute_echo_profile(AudioBuffer(x, 48000), LOW, (lo, hi)).values[0]
    slow = naive_profile(x, fmcw.generate_chirp(LOW).samples[0], (lo, hi))
    assert fast.shape == slow.shape
    assert np.max(np.abs(fast - slow)) <= 1e-6 * np.max(np.abs(slow))


def test_profile_frame_count_floor():
    x = AudioBuffer(np.zeros(576 * 4 + 300), 48000)
    assert fmcw.compute_echo_profile(x, LOW).n_frames == 4
    with pytest.raises(ValueError):
        fmcw.compute_echo_profile(AudioBuffer(np.zeros(500), 48000), LOW)


@pytest.mark.parametrize("window", [(-1, 10), (10, 5), (0, 576)])
def test_profile_window_errors(window):
    with pytest.raises(ValueError):
        fmcw.compute_echo_profile(AudioBuffer(np.zeros(1152), 48000), LOW, window)


def test_differential_profile():
    static = EchoProfile(np.ones((2, 4, 5)), (0, 3), 0.012)
    assert not fmcw.differential_echo_profile(static).values.any()
    a, b = np.arange(4.0), np.arange(4.0) * 3
    two = EchoProfile(np.stack([a, b], axis=1)[None], (0, 3), 0.012)
    d = fmcw.differential_echo_profile(two)
    assert d.n_frames == 1 and np.array_equal(d.values[0, :, 0], b - a)
    ramp = EchoProfile(np.arange(6.0)[None, None, :] * np.ones((1, 3, 1)), (2, 4), 0.012)
    assert np.all(fmcw.differential_echo_profile(ramp).values == 1.0)
    with pytest.raises(ValueError):
        fmcw.differential_echo_profile(EchoProfile(np.ones((1, 4, 1)), (0, 3), 0.012))


def test_echo_profile_invariants():
    with pytest.raises(ValueError):
        EchoProfile(np.ones((1, 4, 2)), (0, 4), 0.012)
    with pytest.raises(ValueError):
        EchoProfile(np.full((1, 1, 2), np.nan), (0, 0), 0.012)


def test_shift_distance():
    assert fmcw.shift_to_distance(1) == pytest.approx(0.00357, abs=1e-5)
    assert fmcw.shift_to_distance(0) == 0
    assert fmcw.shift_to_distance(14) == pytest.approx(0.0500, abs=2e-4)
    assert fmcw.distance_to_shift(0.039) == 11
    with pytest.raises(ValueError):
        fmcw.shift_to_distance(-1)


@given(st.integers(0, 10000))
def test_resolution_invariant(s):
    step = fmcw.shift_to_distance(s + 1) - fmcw.shift_to_distance(s)
    assert abs(step * 100 - 0.357) <= 0.001


@pytest.mark.parametrize("band", [0, 1])
def test_two_band_separability(band):
    # both bands reflected by the same surface, as in the headset geometry
    lo = np.roll(fmcw.generate_fmcw_stream(fmcw.DEFAULT_BANDS[0], 10).samples[0], 11)
    hi = np.roll(fmcw.generate_fmcw_stream(fmcw.DEFAULT_BANDS[1], 10).samples[0], 11)
    spec = fmcw.DEFAULT_BANDS[band]
    alone = (lo, hi)[band]
    mixed = fmcw.echoic_profile(AudioBuffer(lo + hi, 48000), bands=(spec,), shift_window=(0, 119)).values
    single = fmcw.echoic_profile(AudioBuffer(alone, 48000), bands=(spec,), shift_window=(0, 119)).values
    err = np.linalg.norm(mixed - single) / np.linalg.norm(single)
    assert err < 0.02, f"cross-talk {err:.4f}"


def fractional_delay(x, delay):
    k = np.fft.rfftfreq(x.size)
    return np.fft.irfft(np.fft.rfft(x) * np.exp(-2j * np.pi * k * delay), x.size)


@pytest.mark.parametrize("dd", [0.00357, 0.00714, 0.01071])
def test_peak_tracking(dd):
    stream = fmcw.generate_fmcw_stream(LOW, 4).samples[0]
    base = 2 * 0.039 * 48000 / 343
    moved = base + 2 * dd * 48000 / 343
    rx = np.concatenate([fractional_delay(stream, base)[:1152], fractional_delay(stream, moved)[1152:]])
    prof = fmcw.compute_echo_profile(AudioBuffer(rx, 48000), LOW, (0, 119)).values[0]
    peaks = np.argmax(prof, axis=0)
    assert peaks[3] - peaks[0] == round(2 * dd * 48000 / 343)


def test_echoic_profile_channel_layout():
    x = AudioBuffer(np.random.default_rng(0).standard_normal((2, 576 * 3)), 48000)
    p = fmcw.echoic_profile(x, shift_window=(0, 9))
    assert p.values.shape == (4, 10, 3)
    ref = fmcw.compute_echo_profile(apply_filter(x.channel(1), HIGH.passband()), HIGH, (0, 9)).values[0]
    # channel 3 is (mic1, band1); the middle frame is clear of both edges
    assert np.allclose(p.values[3][:, 1], ref[:, 1], rtol=1e-9, atol=1e-9)


def test_echoic_profile_static_first_frame():
    stream = fmcw.generate_fmcw_stream(LOW, 6).samples[0]
    p = fmcw.echoic_profile(AudioBuffer(np.roll(stream, 11), 48000), bands=(LOW,), shift_window=(0, 31))
    d = fmcw.differential_echo_profile(p).values
    assert np.max(np.abs(d)) < 1e-6 * np.max(p.values)


def test_profile_save_load(tmp_path):
    p = EchoProfile(np.random.default_rng(0).random((2, 5, 3)), (3, 7), 0.012)
    p.save(tmp_path / "p.ektf")
    q = EchoProfile.load(tmp_path / "p.ektf")
    assert q.shift_window == (3, 7) and q.frame_period == 0.012
    assert np.allclose(q.values, p.values.astype(np.float32))
