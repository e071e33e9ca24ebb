import json
from dataclasses import replace

import numpy as np
import pytest
from scipy.ndimage import uniform_filter1d

from echokws import fmcw, sim
from echokws.audio import AudioBuffer, apply_filter, band_energy_fraction, lowpass, signal_power, snr_db
from echokws.sim import SceneSpec, VocalSignature

ONE_BAND = SceneSpec(bands=(fmcw.DEFAULT_BANDS[0],), ambient_dbfs=-200.0)


def profile(audio, window=(0, 119), bands=None):
    bands = bands or fmcw.DEFAULT_BANDS
    return fmcw.echoic_profile(audio, bands=bands, shift_window=window)


def test_static_scene_argmax_is_baseline_delay():
    echo = sim.simulate_echo_channel(sim.ZERO_TRAJECTORY, ONE_BAND)
    peaks = np.argmax(profile(echo, bands=ONE_BAND.bands).values[0], axis=0)
    assert np.all(peaks == round(2 * 0.039 * 48000 / 343)) and peaks[0] == 11


def test_step_moves_mouth_peak_by_one():
    scene = replace(ONE_BAND, face_gain=0.0)
    offsets = np.zeros(scene.n_frames)
    offsets[40:] = 0.00357
    echo = sim.simulate_echo_channel(offsets, scene)
    peaks = np.argmax(profile(echo, bands=scene.bands).values[0], axis=0)
    assert np.all(peaks[5:39] == 11) and np.all(peaks[41:-5] == 12)


@pytest.mark.parametrize("d_cm", [1, 5, 10, 20, 30])
def test_static_reflector_distances(d_cm):
    scene = replace(ONE_BAND, baseline_distance=d_cm / 100, face_gain=0.0)
    echo = sim.simulate_echo_channel(sim.ZERO_TRAJECTORY, scene)
    peaks = np.argmax(profile(echo, bands=scene.bands).values[0], axis=0)
    assert np.all(peaks == round(2 * d_cm / 100 * 48000 / 343))


def test_zero_reflection_leaves_static_face(vocab):
    traj = vocab.trajectories["up"]
    echo = sim.simulate_echo_channel(traj, replace(SceneSpec(), reflection_gain=0.0))
    p = profile(echo)
    d = fmcw.differential_echo_profile(p).values
    assert np.linalg.norm(d) < 1e-9 * np.linalg.norm(p.values)


def test_nonpositive_distance_rejected():
    with pytest.raises(ValueError):
        sim.simulate_echo_channel(np.full(10, -0.05), SceneSpec())


def test_vocal_harmonics_at_f0_multiples():
    sig = VocalSignature(0.0, 1.0, (0.0,), (150.0,), (0.0,), ((700.0, 1200.0, 2600.0),))
    x = sim.synthesize_vocal(sig, 1.0).samples[0]
    spec = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(x.size, 1 / 48000)
    from scipy.signal import find_peaks
    # 1 Hz bins; harmonics are 150 bins apart, envelope sidelobes are closer
    idx, _ = find_peaks(spec, distance=100)
    peaks = np.sort(freqs[idx[np.argsort(spec[idx])[-12:]]])
    assert np.allclose(peaks[:12], 150 * np.arange(1, 13), atol=1.0)


def test_zero_amplitude_is_silence():
    assert not sim.synthesize_vocal(sim.SILENT_SIGNATURE, 1.0).samples.any()


def test_vocal_energy_below_10k(vocab):
    for name in sim.COMMANDS:
        x = sim.synthesize_vocal(vocab.signatures[name], 1.0)
        assert 1 - band_energy_fraction(x, 0, 10000) < 1e-3


def test_invalid_signature():
    with pytest.raises(ValueError):
        sim.synthesize_vocal(VocalSignature(0.1, 0.5, (0.1,), (50.0,), (0.1,), ((500.0,),)), 1.0)


def test_utterance_determinism(vocab):
    scene = SceneSpec(rng_seed=99)
    a = sim.synthesize_utterance(3, scene, vocab=vocab).audio.samples
    b = sim.synthesize_utterance(3, scene, vocab=vocab).audio.samples
    assert np.array_equal(a, b)
    c = sim.synthesize_utterance(3, replace(scene, rng_seed=100), vocab=vocab).audio.samples
    assert not np.array_equal(a, c)
    assert a.shape == (1, 48000)


def test_silent_mode_vocal_band_matches_silence(vocab):
    scene = SceneSpec(rng_seed=5)
    silent = sim.synthesize_utterance(0, scene, "silent", vocab).audio
    quiet = sim.synthesize_utterance(vocab.silence_id, scene, vocab=vocab).audio
    lp = lowpass(10000.0)
    ps, pq = signal_power(apply_filter(silent, lp)), signal_power(apply_filter(quiet, lp))
    assert abs(ps / pq - 1) < 0.01


def test_silence_differential_is_small(vocab):
    def dnorm(cid, seed):
        rec = sim.synthesize_utterance(cid, SceneSpec(rng_seed=seed), vocab=vocab)
        return np.linalg.norm(fmcw.differential_echo_profile(profile(rec.audio, (0, 31))).values)
    quiet = dnorm(vocab.silence_id, 1)
    commands = [dnorm(c, 10 + c) for c in range(10)]
    assert quiet < 0.01 * min(commands)


def test_band_isolation(vocab):
    for cid in range(len(vocab.classes)):
        echo, vocal, _ = sim.render_parts(cid, SceneSpec(rng_seed=cid + 3), vocab)
        if vocal.samples.any():
            assert 1 - band_energy_fraction(vocal, 0, 17000) < 0.005
        assert band_energy_fraction(echo, 0, 10000) < 0.005


def test_stratified_split_shares():
    labels = np.repeat(np.arange(4), 30)
    out = np.array(sim.stratified_splits(labels, (0.8, 0.0, 0.2), 3))
    for c in range(4):
        assert abs((out[labels == c] == "test").sum() - 6) <= 1
        assert (out[labels == c] == "tune").sum() == 0
    with pytest.raises(ValueError):
        sim.stratified_splits(labels, (0.5, 0.4), 0)


def test_dataset_counts_follow_corpus_structure(tmp_path, vocab, monkeypatch):
    # structure only; rendering is stubbed to keep the test fast
    monkeypatch.setattr(sim, "_render_one", lambda args: np.zeros((1, 480)))
    counts = {c: 30 for c in sim.COMMANDS}
    counts.update(unknown=125, silence=20)
    path = sim.generate_dataset(vocab, SceneSpec(rng_seed=4), counts, (0.8, 0.0, 0.2), tmp_path)
    rows = sim.read_manifest(path)
    labels = [r["label"] for r in rows]
    assert sum(lab in sim.COMMANDS for lab in labels) == 300
    assert labels.count("unknown") == 125 and labels.count("silence") == 20
    assert {"path", "label", "split", "seed", "mode"} <= set(rows[0])


def test_dataset_deterministic(tmp_path, vocab):
    counts = {"yes": 2, "silence": 2}
    a = sim.generate_dataset(vocab, SceneSpec(rng_seed=8), counts, (0.5, 0.0, 0.5), tmp_path / "a")
    b = sim.generate_dataset(vocab, SceneSpec(rng_seed=8), counts, (0.5, 0.0, 0.5), tmp_path / "b", jobs=2)
    assert a.read_bytes() == b.read_bytes()
    for row in map(json.loads, a.read_text().splitlines()):
        assert (tmp_path / "a" / row["path"]).read_bytes() == (tmp_path / "b" / row["path"]).read_bytes()


def test_dataset_errors(tmp_path, vocab):
    with pytest.raises(ValueError):
        sim.generate_dataset(vocab, SceneSpec(), {"yes": 0}, (1, 0, 0), tmp_path)
    with pytest.raises(ValueError):
        sim.generate_dataset(vocab, SceneSpec(), {"maybe": 1}, (1, 0, 0), tmp_path)


def test_nearest_centroid_separability(vocab):
    feats, labels = [], []
    for cid in range(12):
        for r in range(20):
            rec = sim.synthesize_utterance(cid, SceneSpec(rng_seed=1000 * cid + r), vocab=vocab)
            d = fmcw.differential_echo_profile(profile(rec.audio, (0, 31))).values
            # a 9-frame moving average absorbs the +-50 ms timing jitter
            feats.append(uniform_filter1d(np.abs(d), 9, axis=-1).ravel())
            labels.append(cid)
    X, y = np.array(feats), np.array(labels)
    train = np.arange(len(y)) % 2 == 0
    cent = np.stack([X[train & (y == c)].mean(axis=0) for c in range(12)])
    pred = np.argmin(((X[~train, None, :] - cent[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == y[~train]) > 0.8


def test_interferers(vocab):
    rec = sim.synthesize_utterance(2, SceneSpec(rng_seed=2), vocab=vocab)
    pool = sim.interferer_pool(vocab, 2, 0)
    assert sim.add_interferer(rec, sim.VocalInterferer(pool[0], 0.0)) is rec
    noise = sim.make_noise("white", 48000, 48000, 1)
    mixed = sim.add_interferer(rec, sim.NoiseInterferer(noise, -10.0, 3)).audio
    extra = AudioBuffer(mixed.samples - rec.audio.samples, 48000)
    assert snr_db(signal_power(rec.audio), signal_power(extra)) == pytest.approx(-10.0, abs=0.01)
    us = sim.UltrasoundInterferer(fmcw.DEFAULT_BANDS[1], np.linspace(0.5, 0.8, 84), 0.3)
    with_us = sim.add_interferer(rec, us).audio
    lp = lowpass(10000.0)
    before, after = signal_power(apply_filter(rec.audio, lp)), signal_power(apply_filter(with_us, lp))
    assert abs(after / before - 1) < 1e-3
    with pytest.raises(TypeError):
        sim.add_interferer(rec, object())


@pytest.mark.parametrize("kind", sim.NOISE_KINDS)
def test_noise_unit_rms(kind):
    x = sim.make_noise(kind, 24000, 48000, 5).samples
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(1.0)
    assert np.array_equal(x, sim.make_noise(kind, 24000, 48000, 5).samples)
