"""Command-line front end: generate, featurize, train, fit-fusion, evaluate.

Exit codes: 0 success, 2 configuration error, 3 missing prerequisite,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import torch

from . import container, eval as ev, sim
from .classifier import ModelWeights, TrainingDivergedError, predict_proba, train
from .config import ConfigError, ProjectConfig, load_config
from .fusion import FusionParams, MlpFusionModel, fit_rb_params, train_mlp_fusion
from .pipeline import (Dataset, MissingPrerequisite, NoiseSource, add_vocal_noise, build_tune_set,
                       featurize, reference_vocal_power)

log = logging.getLogger("echokws")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4
MODALITY_SEED = {"vocal": 0, "echoic": 1}


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _feature_path(cfg: ProjectConfig, modality: str) -> Path:
    return cfg.path("dataset") / "features" / f"{modality}.ektf"


# ------------------------------------------------------------------ commands


def cmd_generate(cfg: ProjectConfig, jobs: int = 1) -> Path:
    out = cfg.path("dataset")
    manifest = sim.generate_dataset(cfg.vocab, cfg.scene, cfg.counts, cfg.raw["dataset"]["splits"], out,
                                    encoding=cfg.raw["dataset"]["encoding"], jobs=jobs)
    entries = sim.read_manifest(manifest)
    table = Counter((e["label"], e["split"]) for e in entries)
    print(f"wrote {len(entries)} records to {out}")
    for label in sim.CLASSES:
        if any(k[0] == label for k in table):
            parts = ", ".join(f"{s}={table[(label, s)]}" for s in ("train", "tune", "test"))
            print(f"  {label:8s} {parts}")
    return manifest


def cmd_featurize(cfg: ProjectConfig) -> dict:
    ds = Dataset.open(cfg.path("dataset"))
    settings = cfg.features
    audios = ds.audios(range(len(ds.entries)))
    out = {}
    for modality in ("echoic", "vocal"):
        x = featurize(audios, settings, modality)
        path = _feature_path(cfg, modality)
        path.parent.mkdir(parents=True, exist_ok=True)
        window = tuple(settings.shift_window) if modality == "echoic" else (0, x.shape[2] - 1)
        period = settings.bands[0].period if modality == "echoic" else settings.mfcc.hop
        container.write_tensor(path, x, window, period)
        print(f"{modality}: {x.shape} -> {path}")
        out[modality] = path
    return out


def _load_features(cfg: ProjectConfig, modality: str) -> np.ndarray:
    path = _feature_path(cfg, modality)
    if not path.exists():
        cmd_featurize(cfg)
    values, _, _ = container.read_tensor(path)
    return values.astype(np.float32)


def _vocal_overlays(cfg: ProjectConfig, ds: Dataset, idx: np.ndarray) -> np.ndarray:
    """Background-noise variants of each training recording, as MFCC inputs."""
    t = cfg.raw["train"]
    n_var = int(t["overlay_variants"])
    audios = ds.audios(idx)
    labels = ds.labels(idx)
    ref = reference_vocal_power(audios, labels, sim.CLASSES.index(sim.SILENCE))
    sources = [NoiseSource.synthetic(k, cfg.seed + 100 + j, vocab=cfg.vocab)
               for j, k in enumerate(sim.NOISE_KINDS)]
    lo, hi = t["overlay_snr"]
    variants = []
    for v in range(n_var):
        mixed = []
        for i, a in enumerate(audios):
            rng = np.random.default_rng([cfg.seed, 0x6F766C, v, i])
            src = sources[int(rng.integers(0, len(sources)))]
            mixed.append(add_vocal_noise(a, src, float(rng.uniform(lo, hi)), ref, rng))
        variants.append(featurize(mixed, cfg.features, "vocal"))
    return np.stack(variants, axis=1)


def cmd_train(cfg: ProjectConfig, modality: str) -> Path:
    ds = Dataset.open(cfg.path("dataset"))
    x = _load_features(cfg, modality)
    y = ds.labels()
    tr, te = ds.indices("train"), ds.indices("test")
    if tr.size == 0:
        raise MissingPrerequisite("training split is empty")
    net = cfg.net(modality)
    tcfg = cfg.train
    tcfg = type(tcfg)(**{**tcfg.__dict__, "seed": cfg.seed * 10 + MODALITY_SEED[modality]})
    overlays = None
    if modality == "vocal" and tcfg.background_overlay and cfg.raw["train"]["overlay_variants"] > 0:
        overlays = _vocal_overlays(cfg, ds, tr)
    t0 = time.time()
    result = train(net, tcfg, x[tr], y[tr], overlays,
                   progress=lambda e, l: log.debug("%s epoch %d loss %.5f", modality, e, l))
    log.info("%s trained in %.1f s", modality, time.time() - t0)
    models = cfg.path("models")
    models.mkdir(parents=True, exist_ok=True)
    path = models / f"{modality}.ekwb"
    result.weights.save(path)
    _write_csv(models / f"{modality}_loss.csv", ["epoch", "loss"],
               [[e, f"{v:.8f}"] for e, v in enumerate(result.losses)])
    metrics = {"train_accuracy": result.train_accuracy, "params": result.weights.n_params}
    if te.size:
        p = predict_proba(result.weights, x[te])
        metrics["test_accuracy"] = float(np.mean(np.argmax(p, axis=1) == y[te]))
        sil = y[te] == sim.CLASSES.index(sim.SILENCE)
        if sil.any():
            metrics["test_silence_min_prob"] = float(p[sil, sim.CLASSES.index(sim.SILENCE)].min())
    (models / f"{modality}_metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(f"{modality}: " + ", ".join(f"{k}={v:.4g}" for k, v in sorted(metrics.items())))
    return path


def _load_model(cfg: ProjectConfig, modality: str) -> ModelWeights:
    path = cfg.path("models") / f"{modality}.ekwb"
    if not path.exists():
        raise MissingPrerequisite(f"no {modality} model at {path}; run 'train --modality {modality}'")
    return ModelWeights.load(path)


def _tune_set(cfg: ProjectConfig):
    ds = Dataset.open(cfg.path("dataset"))
    vocal, echoic = _load_model(cfg, "vocal"), _load_model(cfg, "echoic")
    idx = ds.indices("tune")
    if idx.size == 0:
        raise MissingPrerequisite("tune split is empty")
    tune, _ = build_tune_set(ds.audios(idx), ds.labels(idx), vocal, echoic, cfg.features, cfg.scene,
                             cfg.vocab, cfg.tune_augmentation, cfg.seed + 7,
                             sim.CLASSES.index(sim.SILENCE), sim.CLASSES.index(sim.UNKNOWN))
    return tune


def cmd_fit_fusion(cfg: ProjectConfig, strategy: str) -> Path:
    tune = _tune_set(cfg)
    models = cfg.path("models")
    if strategy == "rb":
        fit = fit_rb_params(tune, cfg.rb_fit, seed=cfg.seed)
        path = models / "rb_fusion.ekwb"
        fit.params.save(path, cfg.rb_fit.n_best, {"tune_accuracy": fit.accuracy})
        _write_csv(models / "rb_trace.csv", ["stage", "step", "best_accuracy"],
                   [[s, i, f"{a:.8f}"] for s, i, a in fit.trace])
        print(f"rb fusion: tune accuracy {fit.accuracy:.4f} (GA stage {fit.stage1_accuracy:.4f}, "
              f"best LHS {fit.lhs_best:.4f})")
    elif strategy == "mlp":
        fit = train_mlp_fusion(tune, cfg.mlp, seed=cfg.seed)
        path = models / "mlp_fusion.ekwb"
        fit.model.save(path)
        _write_csv(models / "mlp_loss.csv", ["epoch", "loss"],
                   [[e, f"{v:.8f}"] for e, v in enumerate(fit.losses)])
        print(f"mlp fusion: tune accuracy {fit.train_accuracy:.4f}")
    else:
        raise ConfigError(f"unknown strategy {strategy!r}")
    return path


def load_systems(cfg: ProjectConfig) -> ev.Systems:
    models = cfg.path("models")
    for name in ("rb_fusion", "mlp_fusion"):
        if not (models / f"{name}.ekwb").exists():
            raise MissingPrerequisite(f"no {name} artifact; run 'fit-fusion --strategy {name.split('_')[0]}'")
    rb, n_best = FusionParams.load(models / "rb_fusion.ekwb")
    return ev.Systems(_load_model(cfg, "vocal"), _load_model(cfg, "echoic"), rb,
                      MlpFusionModel.load(models / "mlp_fusion.ekwb"), n_best, sim.CLASSES, cfg.features)


def cmd_evaluate(cfg: ProjectConfig, scenario: str) -> ev.ExperimentResult:
    systems = load_systems(cfg)
    ds = Dataset.open(cfg.path("dataset"))
    idx = ds.indices("test")
    if idx.size == 0:
        raise MissingPrerequisite("test split is empty")
    audios, labels = ds.audios(idx), ds.labels(idx)
    sc = cfg.scenario(scenario)
    if scenario == "clean":
        res = ev.run_clean(audios, labels, systems)
    elif scenario == "noise-sweep":
        res = ev.run_noise_sweep(audios, labels, systems, sc, cfg.vocab)
    elif scenario == "silent-speech":
        res = ev.run_silent_speech(audios, labels, systems, cfg.seed, sc.ambient_dbfs)
    elif scenario == "nearby-speaker":
        pool = sim.interferer_pool(cfg.vocab, sc.interferer_pool, cfg.seed + 11,
                                   sim.SceneSpec(mic_count=cfg.scene.mic_count))
        res = ev.run_nearby_speaker(audios, labels, systems, pool, sc.interferer_gain, cfg.seed)
    else:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {', '.join(ev.SCENARIOS)}")
    out = cfg.path("results")
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{scenario}.csv").write_text(res.to_csv())
    (out / f"{scenario}.json").write_text(res.to_json())
    print(res.to_csv(), end="")
    return res


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON project config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("--out", type=Path, help="base directory for relative config paths")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="echokws", description="Vocal-echoic keyword spotting pipeline")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="synthesize the dataset")
    sub.add_parser("featurize", parents=[common], help="compute echoic and vocal features")
    t = sub.add_parser("train", parents=[common], help="train one modality classifier")
    t.add_argument("--modality", choices=("vocal", "echoic"), required=True)
    f = sub.add_parser("fit-fusion", parents=[common], help="fit a fusion strategy on the tune split")
    f.add_argument("--strategy", choices=("rb", "mlp"), required=True)
    e = sub.add_parser("evaluate", parents=[common], help="run an evaluation scenario")
    e.add_argument("--scenario", choices=ev.SCENARIOS, required=True)
    return p


def _setup_logging(base: Path, verbose: bool) -> None:
    log.handlers.clear()
    log.setLevel(logging.DEBUG)
    err = logging.StreamHandler(sys.stderr)
    err.setLevel(logging.DEBUG if verbose else logging.WARNING)
    log.addHandler(err)
    try:
        base.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(base / "echokws.log")
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        fh.setLevel(logging.INFO)
        log.addHandler(fh)
    except OSError:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    base = args.out if args.out is not None else Path.cwd()
    torch.set_num_threads(1)
    try:
        cfg = load_config(args.config, args.seed, base)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _setup_logging(base, args.verbose)
    log.info("start %s", " ".join(sys.argv[1:] if argv is None else argv))
    try:
        if args.command == "generate":
            cmd_generate(cfg, max(1, args.jobs))
        elif args.command == "featurize":
            cmd_featurize(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.modality)
        elif args.command == "fit-fusion":
            cmd_fit_fusion(cfg, args.strategy)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.scenario)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisite as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDivergedError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.exception("runtime failure")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("done %s", args.command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
