from functools import lru_cache

import numpy as np
import pytest

from echokws import classifier, eval as ev, sim
from echokws.classifier import NetConfig
from echokws.eval import WerReport
from echokws.fusion import FusionParams, MlpFusionModel
from echokws.pipeline import FeatureSettings


def oracle(ref, hyp):
    """Exhaustive-recursion edit distance with the same S > D > I preference."""
    ref, hyp = tuple(ref), tuple(hyp)

    @lru_cache(maxsize=None)
    def dist(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(dist(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]), dist(i - 1, j) + 1, dist(i, j - 1) + 1)

    counts = {"S": 0, "D": 0, "I": 0, "C": 0}
    i, j = len(ref), len(hyp)
    while i or j:
        options = []
        if i and j:
            options.append(("C" if ref[i - 1] == hyp[j - 1] else "S", i - 1, j - 1,
                            ref[i - 1] != hyp[j - 1]))
        if i:
            options.append(("D", i - 1, j, 1))
        if j:
            options.append(("I", i, j - 1, 1))
        for kind, a, b, cost in options:
            if dist(a, b) + cost == dist(i, j):
                counts[kind] += 1
                i, j = a, b
                break
    return WerReport(**counts), dist(len(ref), len(hyp))


def test_examples():
    r = ev.score_wer(["go", "stop"], ["go"])
    assert (r.S, r.D, r.I) == (0, 1, 0) and r.wer == 0.5
    assert ev.score_wer(["yes", "no"], ["yes", "no"]).wer == 0
    r = ev.score_wer(["up", "down", "left"], ["up", "on", "down", "left"])
    assert (r.S, r.D, r.I) == (0, 0, 1) and r.wer == pytest.approx(1 / 3)


def test_no_output_tokens():
    r = ev.score_wer(["yes", "silence"], [None, "silence"])
    assert (r.D, r.N) == (1, 1)
    r = ev.score_wer(["silence"], ["go"])
    assert r.I == 1 and r.N == 0 and r.wer == float("inf")
    with pytest.raises(ValueError):
        ev.score_wer(["yes"], ["maybe"])


def test_matches_oracle_on_random_pairs():
    r = np.random.default_rng(0)
    vocab = list(sim.COMMANDS[:5])
    for _ in range(1000):
        ref = [vocab[k] for k in r.integers(0, 5, r.integers(0, 9))]
        hyp = [vocab[k] for k in r.integers(0, 5, r.integers(0, 9))]
        got = ev.score_wer(ref, hyp)
        want, d = oracle(ref, hyp)
        assert got == want
        assert got.S + got.D + got.I == d
        assert got.N == got.S + got.D + got.C == len(ref)


def test_utterance_scoring_sums():
    refs = ["yes", "no", "silence", "up"]
    hyps = ["yes", "silence", "go", None]
    r = ev.score_utterances(refs, hyps)
    assert (r.S, r.D, r.I, r.C) == (0, 2, 1, 1) and r.N == 3


@pytest.fixture(scope="module")
def small_systems():
    vc = NetConfig(8, True, 1, (13, 98), stage_blocks=(1,))
    ec = NetConfig(8, True, 2, (32, 82), stage_blocks=(1,))
    return ev.Systems(classifier.build_model(vc, 0), classifier.build_model(ec, 1),
                      FusionParams(), MlpFusionModel.zeros(), 4, sim.CLASSES,
                      FeatureSettings(shift_window=(0, 31)))


@pytest.fixture(scope="module")
def utterances(vocab):
    labels = [0, 3, 10, 11]
    audios = [sim.synthesize_utterance(c, sim.SceneSpec(rng_seed=50 + k), vocab=vocab).audio
              for k, c in enumerate(labels)]
    return audios, np.array(labels)


def test_scenarios_deterministic_and_complete(small_systems, utterances, vocab):
    audios, labels = utterances
    cfg = ev.ScenarioConfig(snr_points=(-5.0, 5.0), seed=3)
    a = ev.run_noise_sweep(audios, labels, small_systems, cfg, vocab)
    b = ev.run_noise_sweep(audios, labels, small_systems, cfg, vocab)
    assert a.to_csv() == b.to_csv()
    assert [c for c, _ in a.conditions] == ["snr=-5", "snr=5"]
    for _, reports in a.conditions:
        assert set(reports) == set(ev.SYSTEMS)
        for r in reports.values():
            assert r.N == 3  # keyword and unknown utterances; silence carries no word
    lines = a.to_csv().splitlines()
    assert lines[0] == "condition,system,S,D,I,C,N,WER" and len(lines) == 9


def test_gain_zero_equals_clean(small_systems, utterances, vocab):
    audios, labels = utterances
    pool = sim.interferer_pool(vocab, 2, 0)
    clean = ev.run_clean(audios, labels, small_systems)
    zero = ev.run_nearby_speaker(audios, labels, small_systems, pool, 0.0, 1)
    assert clean.rows()[0][2:] == zero.rows()[0][2:]
    with pytest.raises(ValueError):
        ev.run_nearby_speaker(audios, labels, small_systems, [], 1.0, 1)


def test_silent_speech_and_deletion_share(small_systems, utterances):
    audios, labels = utterances
    res = ev.run_silent_speech(audios, labels, small_systems, seed=2)
    share = ev.deletion_share(res, "silent", "vocal", labels, 11)
    assert 0.0 <= share <= 1.0
    assert '"scenario": "silent-speech"' in res.to_json()


def test_empty_sweep_rejected():
    with pytest.raises(ValueError):
        ev.ScenarioConfig(snr_points=()).validate()
