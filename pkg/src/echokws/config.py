"""Project configuration: a versioned JSON document merged over defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from . import sim
from .classifier import NetConfig, TrainConfig
from .eval import ScenarioConfig
from .fmcw import ChirpSpec
from .fusion import GaConfig, MlpConfig, RbFitConfig
from .mfcc import MfccConfig
from .pipeline import FeatureSettings, TuneAugmentation

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": None,
    "paths": {"dataset": "dataset", "models": "models", "results": "results"},
    "scene": {
        "baseline_distance": 0.039, "mic_count": 1, "reflection_gain": 0.2, "face_gain": 0.6,
        "ambient_dbfs": -60.0, "vocal_rms": 0.05, "speed_of_sound": 343.0, "mic_spacing": 0.018,
        "chirp_amplitude": 0.4, "vocab_seed": 7,
    },
    "dataset": {
        "counts": {"command": 36, "unknown": 72, "silence": 48},
        "splits": [0.5, 0.2, 0.3],
        "encoding": "float32",
    },
    "features": {
        "shift_window": [0, 31],
        "margin": 500.0,
        "taps": 255,
        "mfcc": {"pre_emphasis": 0.97, "frame_len": 0.025, "hop": 0.010, "n_mels": 40,
                 "n_coeffs": 13, "mel_low": 20.0, "mel_high": 5000.0, "decimate_to": 16000.0},
    },
    "models": {
        "echoic": {"width_divisor": 8, "depthwise_separable": True, "stem_kernel": 3},
        "vocal": {"width_divisor": 8, "depthwise_separable": True, "stem_kernel": 3},
    },
    "train": {
        "warmup_epochs": 8, "peak_lr": 0.1, "total_epochs": 150, "batch_size": 32,
        "momentum": 0.9, "weight_decay": 5e-4,
        "random_noise": True, "random_padding": True, "background_overlay": True,
        "noise_sigma": 0.02, "max_shift": 0.10, "overlay_prob": 0.5,
        "overlay_variants": 2, "overlay_snr": [5.0, 20.0],
    },
    "fusion": {
        "n_best": 4,
        "ga": {"population": 64, "tournament": 3, "crossover_p": 0.5, "mutation_sigma": 0.1,
               "mutation_p": 0.15, "elitism": 2, "generations": 200, "prerun_fraction": 0.2,
               "prerun_generations": 40},
        "grid": {"coarse_step": 0.1, "fine_step": 0.02},
        "mlp": {"hidden": 64, "epochs": 200, "lr": 1e-3, "batch_size": 32,
                "scale_low": 0.95, "scale_high": 1.05},
        "tune": {"copies": 4, "snr_range": [-15.0, 15.0], "noise_kinds": ["white", "pink", "babble"],
                 "interferer_gain": 1.0, "interferer_pool": 16},
    },
    "scenarios": {
        "noise_sweep": {"snr_points": [-10.0, -5.0, 0.0, 5.0, 10.0], "noise_source": "babble",
                        "full_band": False},
        "nearby_speaker": {"gain": 1.0, "pool_size": 16},
        "silent_speech": {},
    },
}

# Sections whose keys are free-form (not checked against the defaults).
_OPEN = {("scenarios", "silent_speech")}


def _merge(base: dict, over: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = ".".join(path + (key,))
        if key not in base and path not in _OPEN:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base.get(key), dict) and key != "counts":
            if not isinstance(val, dict):
                raise ConfigError(f"'{where}' must be an object")
            out[key] = _merge(base[key], val, path + (key,))
        else:
            out[key] = val
    return out


@dataclass(frozen=True)
class ProjectConfig:
    raw: dict
    base_dir: Path

    # ---- derived views
    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def path(self, name: str) -> Path:
        p = Path(self.raw["paths"][name])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def scene(self) -> sim.SceneSpec:
        s = self.raw["scene"]
        bands = tuple(ChirpSpec(b.f_low, b.f_high, b.period, b.rate, s["chirp_amplitude"])
                      for b in sim.DEFAULT_BANDS)
        return sim.SceneSpec(baseline_distance=s["baseline_distance"], mic_count=s["mic_count"],
                             bands=bands, reflection_gain=s["reflection_gain"], face_gain=s["face_gain"],
                             rng_seed=self.seed, ambient_dbfs=s["ambient_dbfs"], vocal_rms=s["vocal_rms"],
                             speed_of_sound=s["speed_of_sound"], mic_spacing=s["mic_spacing"])

    @property
    def vocab(self) -> sim.SyntheticVocabulary:
        return sim.SyntheticVocabulary.default(int(self.raw["scene"]["vocab_seed"]))

    @property
    def counts(self) -> dict:
        c = self.raw["dataset"]["counts"]
        out = {}
        for label in sim.CLASSES:
            key = "command" if label in sim.COMMANDS else label
            n = c.get(label, c.get(key))
            if n:
                out[label] = int(n)
        return out

    @property
    def features(self) -> FeatureSettings:
        f = self.raw["features"]
        return FeatureSettings(tuple(f["shift_window"]), self.scene.bands, f["margin"], f["taps"],
                               MfccConfig(**f["mfcc"]))

    def net(self, modality: str) -> NetConfig:
        m = self.raw["models"][modality]
        scene = self.scene
        fs = self.features
        if modality == "echoic":
            shape = fs.echoic_shape(scene.n_samples, scene.mic_count)
        else:
            shape = fs.vocal_shape(scene.n_samples, scene.rate)
        return NetConfig(width_divisor=m["width_divisor"], depthwise_separable=m["depthwise_separable"],
                         in_channels=shape[0], in_shape=shape[1:], n_classes=len(sim.CLASSES),
                         stem_kernel=m["stem_kernel"])

    @property
    def train(self) -> TrainConfig:
        t = {k: v for k, v in self.raw["train"].items() if k not in ("overlay_variants", "overlay_snr")}
        return TrainConfig(seed=self.seed, **t)

    @property
    def rb_fit(self) -> RbFitConfig:
        f = self.raw["fusion"]
        return RbFitConfig(f["n_best"], GaConfig(**f["ga"]), f["grid"]["coarse_step"], f["grid"]["fine_step"])

    @property
    def mlp(self) -> MlpConfig:
        return MlpConfig(**self.raw["fusion"]["mlp"])

    @property
    def tune_augmentation(self) -> TuneAugmentation:
        t = self.raw["fusion"]["tune"]
        return TuneAugmentation(t["copies"], tuple(t["snr_range"]), tuple(t["noise_kinds"]),
                                t["interferer_gain"], t["interferer_pool"])

    def scenario(self, kind: str) -> ScenarioConfig:
        sc = self.raw["scenarios"]
        ns, nb = sc["noise_sweep"], sc["nearby_speaker"]
        return ScenarioConfig(kind, tuple(float(v) for v in ns["snr_points"]), ns["noise_source"],
                              bool(ns["full_band"]), float(nb["gain"]), int(nb["pool_size"]),
                              float(self.raw["scene"]["ambient_dbfs"]), self.seed)

    def validate(self) -> None:
        r = self.raw
        if r.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {r.get('schema_version')!r}")
        if not isinstance(r.get("seed"), int) or isinstance(r.get("seed"), bool):
            raise ConfigError("'seed' must be an integer (no nondeterministic default)")
        splits = r["dataset"]["splits"]
        if len(splits) != 3 or abs(sum(splits) - 1.0) > 1e-9 or min(splits) < 0:
            raise ConfigError("'dataset.splits' must be three non-negative fractions summing to 1")
        if r["dataset"]["encoding"] not in ("float32", "pcm16"):
            raise ConfigError("'dataset.encoding' must be 'float32' or 'pcm16'")
        for key in r["dataset"]["counts"]:
            if key not in sim.CLASSES and key != "command":
                raise ConfigError(f"unknown class 'dataset.counts.{key}'")
        if r["scenarios"]["noise_sweep"]["snr_points"] == []:
            raise ConfigError("'scenarios.noise_sweep.snr_points' must not be empty")
        checks = [
            ("scene", lambda: self.scene.validate()),
            ("features.mfcc", lambda: self.features.mfcc.validate()),
            ("models.echoic", lambda: self.net("echoic").validate()),
            ("models.vocal", lambda: self.net("vocal").validate()),
            ("train", lambda: self.train.validate()),
            ("fusion.ga", lambda: self.rb_fit.ga.validate()),
        ]
        for where, fn in checks:
            try:
                fn()
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"'{where}': {exc}") from None
        lo, hi = r["features"]["shift_window"]
        if not 0 <= lo <= hi < self.scene.chirp_len:
            raise ConfigError(f"'features.shift_window' must lie within [0, {self.scene.chirp_len})")


def load_config(path=None, seed: int | None = None, base_dir=None) -> ProjectConfig:
    """Read and validate a config file; ``seed`` overrides the file's seed."""
    user = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
    raw = _merge(DEFAULTS, user)
    if seed is not None:
        raw["seed"] = int(seed)
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    cfg = ProjectConfig(raw, base)
    try:
        cfg.validate()
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from None
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg
