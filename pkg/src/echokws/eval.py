"""Word error rate scoring and the robustness scenarios."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels, sim
from .classifier import ModelWeights
from .fusion import REJECTED, FusionParams, MlpFusionModel, rb_fuse
from .pipeline import (FeatureSettings, NoiseSource, add_nearby_speaker, add_vocal_noise, posteriors,
                       reference_vocal_power, replace_vocal_band, silence_floor)

NO_OUTPUT = None
SYSTEMS = ("vocal", "echoic", "rb-fusion", "mlp-fusion")
SCENARIOS = ("clean", "noise-sweep", "silent-speech", "nearby-speaker")


@dataclass(frozen=True)
class WerReport:
    S: int = 0
    D: int = 0
    I: int = 0
    C: int = 0

    @property
    def N(self) -> int:
        return self.S + self.D + self.C

    @property
    def wer(self) -> float:
        if self.N == 0:
            return 0.0 if self.I == 0 else float("inf")
        return (self.S + self.D + self.I) / self.N

    def __add__(self, other: "WerReport") -> "WerReport":
        return WerReport(self.S + other.S, self.D + other.D, self.I + other.I, self.C + other.C)

    def as_dict(self) -> dict:
        return {"S": self.S, "D": self.D, "I": self.I, "C": self.C, "N": self.N, "wer": self.wer}


def _is_empty(tok) -> bool:
    return tok is NO_OUTPUT or tok == sim.SILENCE


def score_wer(reference, hypothesis, vocabulary=sim.CLASSES) -> WerReport:
    """Minimum-edit alignment counts; silence and rejections emit no token.

    Ties between equally short alignments prefer substitution, then deletion,
    then insertion.
    """
    codes = {}
    seqs = []
    for seq in (reference, hypothesis):
        coded = []
        for tok in seq:
            if _is_empty(tok):
                continue
            if vocabulary is not None and tok not in vocabulary:
                raise ValueError(f"unknown label {tok!r}")
            coded.append(codes.setdefault(tok, len(codes)))
        seqs.append(coded)
    return WerReport(*kernels.edit_counts(seqs[0], seqs[1]))


def score_utterances(ref_labels, hyp_labels, vocabulary=sim.CLASSES) -> WerReport:
    """Sum of per-utterance reports (each utterance holds at most one word)."""
    total = WerReport()
    for r, h in zip(ref_labels, hyp_labels, strict=True):
        total = total + score_wer([r], [h], vocabulary)
    return total


# ------------------------------------------------------------------ systems


@dataclass(eq=False)
class Systems:
    vocal: ModelWeights
    echoic: ModelWeights
    rb: FusionParams
    mlp: MlpFusionModel
    n_best: int = 4
    classes: tuple = sim.CLASSES
    settings: FeatureSettings = field(default_factory=FeatureSettings)

    @property
    def silence_id(self) -> int:
        return self.classes.index(sim.SILENCE)

    @property
    def unknown_id(self) -> int:
        return self.classes.index(sim.UNKNOWN)

    def decide(self, probs_v: np.ndarray, probs_e: np.ndarray) -> dict:
        """Per-system class ids; -1 marks a rejected fusion outcome."""
        rb = np.empty(probs_v.shape[0], dtype=np.int64)
        for t in range(rb.size):
            o = rb_fuse(probs_v[t], probs_e[t], self.rb, self.n_best, self.silence_id, self.unknown_id)
            rb[t] = -1 if o.kind == REJECTED else o.probs.argmax
        return {
            "vocal": np.argmax(probs_v, axis=1),
            "echoic": np.argmax(probs_e, axis=1),
            "rb-fusion": rb,
            "mlp-fusion": np.argmax(self.mlp.predict_proba(probs_v, probs_e), axis=1),
        }

    def run(self, audios) -> dict:
        pv, pe = posteriors(audios, self.vocal, self.echoic, self.settings)
        return self.decide(pv, pe)

    def tokens(self, ids) -> list:
        return [NO_OUTPUT if i < 0 else self.classes[i] for i in ids]


@dataclass(eq=False)
class ExperimentResult:
    scenario: str
    conditions: list = field(default_factory=list)  # (condition, {system: WerReport})
    n_utterances: int = 0
    predictions: dict = field(default_factory=dict)  # condition -> {system: ids}

    def report(self, condition: str, system: str) -> WerReport:
        return dict(self.conditions)[condition][system]

    def rows(self) -> list:
        out = []
        for cond, reports in self.conditions:
            for system in SYSTEMS:
                r = reports[system]
                out.append([cond, system, r.S, r.D, r.I, r.C, r.N, f"{r.wer:.6f}"])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "system", "S", "D", "I", "C", "N", "WER"])
        w.writerows(self.rows())
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"scenario": self.scenario, "utterances": self.n_utterances,
               "conditions": [{"condition": c, "systems": {s: r[s].as_dict() for s in SYSTEMS}}
                              for c, r in self.conditions]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _score_condition(systems: Systems, labels, decisions: dict) -> dict:
    refs = [systems.classes[y] for y in labels]
    return {s: score_utterances(refs, systems.tokens(decisions[s]), systems.classes) for s in SYSTEMS}


def run_condition(systems: Systems, audios, labels, name: str, result: ExperimentResult) -> None:
    decisions = systems.run(audios)
    result.conditions.append((name, _score_condition(systems, labels, decisions)))
    result.predictions[name] = decisions


# ------------------------------------------------------------------ scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "noise-sweep"
    snr_points: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0)
    noise_source: str = "babble"
    full_band: bool = False
    interferer_gain: float = 1.0
    interferer_pool: int = 16
    ambient_dbfs: float = -60.0
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.kind!r}; choose from {', '.join(SCENARIOS)}")
        if self.kind == "noise-sweep" and not self.snr_points:
            raise ValueError("noise sweep needs at least one SNR point")


def run_clean(audios, labels, systems: Systems) -> ExperimentResult:
    res = ExperimentResult("clean", n_utterances=len(audios))
    run_condition(systems, audios, labels, "clean", res)
    return res


def run_noise_sweep(audios, labels, systems: Systems, config: ScenarioConfig,
                    vocab: sim.SyntheticVocabulary | None = None) -> ExperimentResult:
    config.validate()
    if not audios:
        raise ValueError("no test utterances")
    ref = reference_vocal_power(audios, labels, systems.silence_id)
    source = NoiseSource.resolve(config.noise_source, config.seed, audios[0].rate, vocab)
    res = ExperimentResult("noise-sweep", n_utterances=len(audios))
    for snr in config.snr_points:
        noisy = []
        for i, a in enumerate(audios):
            rng = np.random.default_rng([config.seed, 0x6E7377, i])
            noisy.append(add_vocal_noise(a, source, float(snr), ref, rng, config.full_band))
        run_condition(systems, noisy, labels, f"snr={float(snr):g}", res)
    return res


def run_silent_speech(audios, labels, systems: Systems, seed: int,
                      ambient_dbfs: float = -60.0) -> ExperimentResult:
    """Vocal band of every recording swapped for a quiet noise floor."""
    if not audios:
        raise ValueError("no test utterances")
    scene = sim.SceneSpec(ambient_dbfs=ambient_dbfs)
    quiet = [replace_vocal_band(a, silence_floor(a, scene, int(sim.record_seed(seed, i))))
             for i, a in enumerate(audios)]
    res = ExperimentResult("silent-speech", n_utterances=len(audios))
    run_condition(systems, quiet, labels, "silent", res)
    return res


def run_nearby_speaker(audios, labels, systems: Systems, pool, gain: float, seed: int) -> ExperimentResult:
    """One pool voice added to each recording at a fixed gain."""
    if not pool:
        raise ValueError("interferer pool is empty")
    if not audios:
        raise ValueError("no test utterances")
    rng = np.random.default_rng([seed, 0x6E7273])
    picks = rng.integers(0, len(pool), len(audios))
    mixed = [add_nearby_speaker(a, pool[int(p)], gain) for a, p in zip(audios, picks)]
    res = ExperimentResult("nearby-speaker", n_utterances=len(audios))
    run_condition(systems, mixed, labels, f"gain={float(gain):g}", res)
    return res


def deletion_share(result: ExperimentResult, condition: str, system: str, labels, silence_id: int) -> float:
    """Fraction of non-silence utterances whose outcome was a deletion."""
    ids = result.predictions[condition][system]
    keyword = np.asarray(labels) != silence_id
    if not keyword.any():
        return 0.0
    empty = (ids < 0) | (ids == silence_id)
    return float(np.mean(empty[keyword]))
