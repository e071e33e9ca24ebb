"""Glue between raw recordings and the two classifiers.

Holds the per-modality feature extractors, dataset loading, and the audio
transformations (vocal-band noise, nearby speaker, vocal-band replacement)
shared by fusion fitting and the evaluation scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fmcw, sim
from .audio import AudioBuffer, apply_filter, crop, lowpass, noise_scale, signal_power, wav_read
from .classifier import ModelWeights, predict_proba
from .fusion import AUGMENTATIONS, TuneSet, draw_augmentations
from .mfcc import VOCAL_CUTOFF, MfccConfig, vocal_features


class MissingPrerequisite(RuntimeError):
    """A required artifact (dataset, features, model) is absent."""


@dataclass(frozen=True)
class FeatureSettings:
    shift_window: tuple = (0, 31)
    bands: tuple = fmcw.DEFAULT_BANDS
    margin: float = 500.0
    taps: int = 255
    mfcc: MfccConfig = field(default_factory=MfccConfig)

    def echoic_shape(self, n_samples: int, mic_count: int) -> tuple:
        lo, hi = self.shift_window
        return (mic_count * len(self.bands), hi - lo + 1, n_samples // self.bands[0].length - 1)

    def vocal_shape(self, n_samples: int, rate: float) -> tuple:
        factor = int(round(rate / self.mfcc.decimate_to))
        n_dec = -(-n_samples // factor)
        return (1, self.mfcc.n_coeffs, self.mfcc.n_frames(n_dec, self.mfcc.decimate_to))


def echoic_input(audio: AudioBuffer, settings: FeatureSettings = FeatureSettings()) -> np.ndarray:
    """Differential echo profile, (mic*band, shift, frame-1)."""
    prof = fmcw.echoic_profile(audio, settings.bands, tuple(settings.shift_window),
                               settings.margin, settings.taps)
    return fmcw.differential_echo_profile(prof).values


def vocal_input(audio: AudioBuffer, settings: FeatureSettings = FeatureSettings()) -> np.ndarray:
    """MFCC matrix with a leading channel axis, (1, coeff, frame)."""
    return vocal_features(audio, settings.mfcc).values[None]


def featurize(audios, settings: FeatureSettings, modality: str) -> np.ndarray:
    fn = {"echoic": echoic_input, "vocal": vocal_input}[modality]
    return np.stack([fn(a, settings) for a in audios]).astype(np.float32)


# ------------------------------------------------------------------ datasets


@dataclass(frozen=True, eq=False)
class Dataset:
    root: Path
    entries: list
    classes: tuple = sim.CLASSES

    @classmethod
    def open(cls, root) -> "Dataset":
        root = Path(root)
        manifest = root / "manifest.jsonl"
        if not manifest.exists():
            raise MissingPrerequisite(f"no dataset manifest at {manifest}; run 'generate' first")
        return cls(root, sim.read_manifest(manifest))

    def indices(self, split: str | None = None) -> np.ndarray:
        return np.array([i for i, e in enumerate(self.entries) if split is None or e["split"] == split],
                        dtype=np.int64)

    def labels(self, idx=None) -> np.ndarray:
        idx = range(len(self.entries)) if idx is None else idx
        return np.array([self.classes.index(self.entries[i]["label"]) for i in idx], dtype=np.int64)

    def audio(self, i: int) -> AudioBuffer:
        return wav_read(self.root / self.entries[i]["path"])

    def audios(self, idx) -> list:
        return [self.audio(int(i)) for i in idx]


# ------------------------------------------------------------------ transformations


def vocal_band(audio: AudioBuffer) -> AudioBuffer:
    return apply_filter(audio, lowpass(VOCAL_CUTOFF))


def vocal_band_power(audio: AudioBuffer) -> float:
    return signal_power(vocal_band(audio))


def reference_vocal_power(audios, labels, silence_id: int) -> float:
    """Mean vocal-band power of the non-silence recordings.

    Noise levels are set against this dataset-wide reference so that silence
    recordings, which carry no voice, receive the same absolute noise.
    """
    powers = [vocal_band_power(a) for a, y in zip(audios, labels) if y != silence_id]
    if not powers:
        raise ValueError("no voiced recordings to measure a reference power from")
    return float(np.mean(powers))


class NoiseSource:
    """Long mono noise recording from which random segments are cropped."""

    def __init__(self, samples: AudioBuffer, name: str):
        self.buffer = samples
        self.name = name

    @classmethod
    def synthetic(cls, kind: str, seed: int, rate: float = 48000, seconds: float = 8.0,
                  vocab: sim.SyntheticVocabulary | None = None) -> "NoiseSource":
        return cls(sim.make_noise(kind, int(seconds * rate), rate, seed, vocab), kind)

    @classmethod
    def from_directory(cls, path, rate: float = 48000) -> "NoiseSource":
        files = sorted(Path(path).glob("*.wav"))
        if not files:
            raise MissingPrerequisite(f"no WAV files in noise directory {path}")
        parts = []
        for f in files:
            b = wav_read(f)
            if b.rate != rate:
                raise ValueError(f"{f}: rate {b.rate} Hz, expected {rate} Hz")
            parts.append(b.samples.mean(axis=0))
        return cls(AudioBuffer(np.concatenate(parts), rate), str(path))

    @classmethod
    def resolve(cls, spec: str, seed: int, rate: float = 48000,
                vocab: sim.SyntheticVocabulary | None = None) -> "NoiseSource":
        if spec in sim.NOISE_KINDS:
            return cls.synthetic(spec, seed, rate, vocab=vocab)
        return cls.from_directory(spec, rate)


def add_vocal_noise(audio: AudioBuffer, source: NoiseSource, snr_db: float, ref_power: float,
                    rng: np.random.Generator, full_band: bool = False) -> AudioBuffer:
    """Add noise at ``snr_db`` relative to ``ref_power``.

    By default the noise is confined to the vocal band so the ultrasonic
    channel is untouched.
    """
    seg = crop(source.buffer, len(audio), rng)
    if not full_band:
        seg = vocal_band(seg)
    k = noise_scale(ref_power, signal_power(seg), snr_db)
    return AudioBuffer(audio.samples + k * seg.samples, audio.rate)


def replace_vocal_band(audio: AudioBuffer, floor: AudioBuffer) -> AudioBuffer:
    """Swap the vocal band for a low-level floor, keeping the echo band."""
    return AudioBuffer(audio.samples - vocal_band(audio).samples + floor.samples, audio.rate)


def silence_floor(audio: AudioBuffer, scene: sim.SceneSpec, seed: int) -> AudioBuffer:
    sc = sim.SceneSpec(mic_count=audio.channels, rate=audio.rate, duration=len(audio) / audio.rate,
                       ambient_dbfs=scene.ambient_dbfs)
    return sim.vocal_band_replacement(sc, seed, len(audio))


def add_nearby_speaker(audio: AudioBuffer, interferer: AudioBuffer, gain: float) -> AudioBuffer:
    rec = sim.UtteranceRecord(audio, 0)
    src = AudioBuffer(np.broadcast_to(interferer.samples[:1], (audio.channels, len(interferer))), audio.rate)
    return sim.add_interferer(rec, sim.VocalInterferer(src, gain)).audio


# ------------------------------------------------------------------ posteriors


def posteriors(audios, vocal: ModelWeights, echoic: ModelWeights,
               settings: FeatureSettings) -> tuple[np.ndarray, np.ndarray]:
    pv = predict_proba(vocal, featurize(audios, settings, "vocal"))
    pe = predict_proba(echoic, featurize(audios, settings, "echoic"))
    return pv, pe


@dataclass(frozen=True)
class TuneAugmentation:
    copies: int = 4
    snr_range: tuple = (-15.0, 15.0)
    noise_kinds: tuple = sim.NOISE_KINDS
    interferer_gain: float = 1.0
    interferer_pool: int = 16


def augment_for_tuning(audios, labels, silence_id: int, scene: sim.SceneSpec,
                       vocab: sim.SyntheticVocabulary, aug: TuneAugmentation, seed: int):
    """Replicate each recording ``aug.copies`` times under one random augmentation each.

    Returns (augmented audios, labels, augmentation names).
    """
    ref = reference_vocal_power(audios, labels, silence_id)
    rate = audios[0].rate
    sources = [NoiseSource.synthetic(k, seed + j, rate, vocab=vocab) for j, k in enumerate(aug.noise_kinds)]
    pool = sim.interferer_pool(vocab, aug.interferer_pool, seed ^ 0x1F2E3D,
                               sim.SceneSpec(mic_count=audios[0].channels, rate=rate))
    n = len(audios) * aug.copies
    kinds = draw_augmentations(n, seed)
    out, ys, names = [], [], []
    for k in range(n):
        i = k % len(audios)
        a = audios[i]
        rng = np.random.default_rng([seed, 0x74756E, k])
        name = AUGMENTATIONS[kinds[k]]
        if name == "noise":
            src = sources[int(rng.integers(0, len(sources)))]
            a = add_vocal_noise(a, src, float(rng.uniform(*aug.snr_range)), ref, rng)
        elif name == "vocal":
            a = add_nearby_speaker(a, pool[int(rng.integers(0, len(pool)))], aug.interferer_gain)
        elif name == "drop":
            a = replace_vocal_band(a, silence_floor(a, scene, int(rng.integers(0, 2**31))))
        out.append(a)
        ys.append(labels[i])
        names.append(name)
    return out, np.asarray(ys, dtype=np.int64), names


def build_tune_set(audios, labels, vocal: ModelWeights, echoic: ModelWeights, settings: FeatureSettings,
                   scene: sim.SceneSpec, vocab: sim.SyntheticVocabulary, aug: TuneAugmentation,
                   seed: int, silence_id: int = 11, unknown_id: int = 10) -> tuple[TuneSet, list]:
    aud, ys, names = augment_for_tuning(audios, labels, silence_id, scene, vocab, aug, seed)
    pv, pe = posteriors(aud, vocal, echoic, settings)
    return TuneSet(pv, pe, ys, silence_id, unknown_id), names
