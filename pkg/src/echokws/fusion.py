"""Late fusion of the vocal and echoic posteriors.

Two strategies live here: a reliability-gated log-linear combination whose
twelve scalars are fitted by a genetic algorithm plus a grid search, and a
one-hidden-layer MLP trained on concatenated posteriors.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import container, kernels
from .classifier import PROB_FLOOR, PredictionVector

DEFAULT_N_BEST = 4
THRESHOLD_RANGE = (0.0, 10.0)
WEIGHT_RANGE = (-5.0, 5.0)
ADJUST_RANGE = (0.0, 1.5)

FUSED, VOCAL_ONLY, ECHOIC_ONLY, REJECTED = "fused", "vocal-only", "echoic-only", "rejected"


# ------------------------------------------------------------------ indicators


def _sorted_logs(probs, n_best: int) -> np.ndarray:
    p = np.asarray(probs.probs if isinstance(probs, PredictionVector) else probs, dtype=np.float64)
    if not 2 <= n_best <= p.shape[-1]:
        raise ValueError(f"n_best must be in [2, {p.shape[-1]}], got {n_best}")
    top = -np.sort(-np.maximum(p, PROB_FLOOR), axis=-1)[..., :n_best]
    return np.log(top)


def _difference(lg: np.ndarray) -> np.ndarray:
    n = lg.shape[-1]
    return (lg[..., :1] - lg[..., 1:]).sum(axis=-1) / (n - 1)


def _dispersion(lg: np.ndarray) -> np.ndarray:
    # sum over i < j of (lg_i - lg_j) collapses to a weighted sum of the sorted logs
    n = lg.shape[-1]
    coef = n - 1 - 2 * np.arange(n)
    return (lg * coef).sum(axis=-1) * 2.0 / (n * (n - 1))


def nbest_difference(probs, n_best: int = DEFAULT_N_BEST):
    """Mean log-ratio of the top posterior to each of the next ``n_best - 1``."""
    return _difference(_sorted_logs(probs, n_best))


def nbest_dispersion(probs, n_best: int = DEFAULT_N_BEST):
    """Mean pairwise log-ratio among the top ``n_best`` posteriors."""
    return _dispersion(_sorted_logs(probs, n_best))


@dataclass(frozen=True)
class ReliabilityIndicators:
    L_v: float
    D_v: float
    L_e: float
    D_e: float
    n_best: int = DEFAULT_N_BEST

    @classmethod
    def compute(cls, vocal, echoic, n_best: int = DEFAULT_N_BEST) -> "ReliabilityIndicators":
        lv, le = _sorted_logs(vocal, n_best), _sorted_logs(echoic, n_best)
        return cls(float(_difference(lv)), float(_dispersion(lv)),
                   float(_difference(le)), float(_dispersion(le)), n_best)

    def as_array(self) -> np.ndarray:
        return np.array([self.L_v, self.D_v, self.L_e, self.D_e])


def indicator_matrix(probs_v: np.ndarray, probs_e: np.ndarray, n_best: int = DEFAULT_N_BEST) -> np.ndarray:
    """(T, 4) rows of [L_v, D_v, L_e, D_e]."""
    lv, le = _sorted_logs(probs_v, n_best), _sorted_logs(probs_e, n_best)
    return np.stack([_difference(lv), _dispersion(lv), _difference(le), _dispersion(le)], axis=1)


# ------------------------------------------------------------------ parameters


@dataclass(frozen=True)
class FusionParams:
    t_l_v: float = 0.0
    t_d_v: float = 0.0
    t_l_e: float = 0.0
    t_d_e: float = 0.0
    w: tuple = (0.0, 0.0, 0.0, 0.0)
    a_v_s: float = 1.0
    a_v_u: float = 1.0
    a_e_s: float = 1.0
    a_e_u: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(v) for v in self.w))
        if len(self.w) != 4:
            raise ValueError("need exactly four exponent weights")

    def validate(self) -> None:
        if min(self.thresholds) < 0:
            raise ValueError("thresholds must be non-negative")
        lo, hi = ADJUST_RANGE
        if not all(lo <= a <= hi for a in self.adjustments):
            raise ValueError(f"adjustments must lie in [{lo}, {hi}]")

    @property
    def thresholds(self) -> tuple:
        return (self.t_l_v, self.t_d_v, self.t_l_e, self.t_d_e)

    @property
    def adjustments(self) -> tuple:
        return (self.a_v_s, self.a_v_u, self.a_e_s, self.a_e_u)

    def to_array(self) -> np.ndarray:
        return np.array([*self.thresholds, *self.w, *self.adjustments], dtype=np.float64)

    @classmethod
    def from_array(cls, v) -> "FusionParams":
        v = [float(x) for x in v]
        if len(v) != 12:
            raise ValueError(f"expected 12 values, got {len(v)}")
        return cls(v[0], v[1], v[2], v[3], tuple(v[4:8]), v[8], v[9], v[10], v[11])

    def save(self, path, n_best: int = DEFAULT_N_BEST, extra: dict | None = None) -> None:
        meta = {"kind": "rb-fusion", "n_best": int(n_best), "values": self.to_array().tolist(),
                "names": ["t_l_v", "t_d_v", "t_l_e", "t_d_e", "w1", "w2", "w3", "w4",
                          "a_v_s", "a_v_u", "a_e_s", "a_e_u"]}
        if extra:
            meta.update(extra)
        container.write_weights(path, meta, OrderedDict(params=self.to_array()))

    @classmethod
    def load(cls, path) -> tuple["FusionParams", int]:
        meta, _ = container.read_weights(path)
        if meta.get("kind") != "rb-fusion":
            raise container.ContainerError(f"{path}: not a reliability-fusion file")
        # The JSON copy is exact; the float32 blob is for generic readers.
        return cls.from_array(meta["values"]), int(meta["n_best"])


@dataclass(frozen=True, eq=False)
class FusionOutcome:
    kind: str
    probs: PredictionVector | None = None
    lam: float | None = None


def reliability_gate(ind: ReliabilityIndicators, params: FusionParams) -> tuple[bool, bool]:
    r_v = ind.L_v > params.t_l_v and ind.D_v > params.t_d_v
    r_e = ind.L_e > params.t_l_e and ind.D_e > params.t_d_e
    return bool(r_v), bool(r_e)


def fusion_exponent(ind: ReliabilityIndicators, params: FusionParams, adjust=(1.0, 1.0, 1.0, 1.0)) -> float:
    a = [float(v) for v in adjust]
    lo, hi = ADJUST_RANGE
    if len(a) != 4 or not all(lo <= v <= hi for v in a):
        raise ValueError(f"adjust must be four values in [{lo}, {hi}]")
    d = (ind.L_v, ind.D_v, ind.L_e, ind.D_e)
    z = sum(w * av * dv for w, av, dv in zip(params.w, a, d))
    # Stable logistic for large |z|.
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def category(class_id: int, silence_id: int, unknown_id: int) -> int:
    """0 for a command, 1 for silence, 2 for unknown."""
    return 1 if class_id == silence_id else 2 if class_id == unknown_id else 0


def select_adjustments(vocal_argmax: int, echoic_argmax: int, params: FusionParams,
                       silence_id: int = 11, unknown_id: int = 10) -> np.ndarray:
    """Per-indicator reliability adjustments.

    A modality whose top class is silence or unknown gets both of its entries
    replaced by the matching fitted value; otherwise entries stay at one.
    Vocal silence is the exception: a silent voice says nothing about the
    mouth, so the vocal entries stay at one and ``a_v_s`` is never applied.
    """
    a = np.ones(4)
    cv = _vocal_adjust_category(vocal_argmax, silence_id, unknown_id)
    ce = category(echoic_argmax, silence_id, unknown_id)
    if cv:
        a[0:2] = params.a_v_s if cv == 1 else params.a_v_u
    if ce:
        a[2:4] = params.a_e_s if ce == 1 else params.a_e_u
    return a


def _vocal_adjust_category(class_id: int, silence_id: int, unknown_id: int) -> int:
    c = category(class_id, silence_id, unknown_id)
    return 0 if c == 1 else c


def _as_probs(p) -> np.ndarray:
    return np.asarray(p.probs if isinstance(p, PredictionVector) else p, dtype=np.float64)


def rb_fuse(vocal, echoic, params: FusionParams, n_best: int = DEFAULT_N_BEST,
            silence_id: int = 11, unknown_id: int = 10) -> FusionOutcome:
    pv, pe = _as_probs(vocal), _as_probs(echoic)
    if pv.shape != pe.shape:
        raise ValueError(f"vector lengths differ: {pv.shape} vs {pe.shape}")
    ind = ReliabilityIndicators.compute(pv, pe, n_best)
    r_v, r_e = reliability_gate(ind, params)
    if r_v and r_e:
        adjust = select_adjustments(int(np.argmax(pv)), int(np.argmax(pe)), params, silence_id, unknown_id)
        lam = fusion_exponent(ind, params, adjust)
        score = lam * np.log(np.maximum(pv, PROB_FLOOR)) + (1 - lam) * np.log(np.maximum(pe, PROB_FLOOR))
        fused = np.exp(score - score.max())
        return FusionOutcome(FUSED, PredictionVector(fused / fused.sum()), lam)
    if r_v:
        return FusionOutcome(VOCAL_ONLY, PredictionVector(pv))
    if r_e:
        return FusionOutcome(ECHOIC_ONLY, PredictionVector(pe))
    return FusionOutcome(REJECTED)


def rb_predict(probs_v: np.ndarray, probs_e: np.ndarray, params: FusionParams,
               n_best: int = DEFAULT_N_BEST, silence_id: int = 11, unknown_id: int = 10) -> np.ndarray:
    """Batch decision: class id per row, or -1 for a rejected outcome."""
    out = np.empty(probs_v.shape[0], dtype=np.int64)
    for t in range(out.size):
        o = rb_fuse(probs_v[t], probs_e[t], params, n_best, silence_id, unknown_id)
        out[t] = -1 if o.kind == REJECTED else o.probs.argmax
    return out


# ------------------------------------------------------------------ genetic algorithm


def latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points in [0, 1)^d with exactly one point per stratum on every axis."""
    u = rng.random((n, d))
    strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    return (strata + u) / n


@dataclass(frozen=True)
class GaConfig:
    population: int = 64
    tournament: int = 3
    crossover_p: float = 0.5
    mutation_sigma: float = 0.10
    mutation_p: float = 0.15
    elitism: int = 2
    generations: int = 200
    prerun_fraction: float = 0.2
    prerun_generations: int = 40

    def validate(self) -> None:
        if self.population < 2 or not 0 <= self.elitism < self.population:
            raise ValueError("need population >= 2 and 0 <= elitism < population")
        if self.tournament < 1 or self.generations < 0:
            raise ValueError("tournament must be >= 1 and generations >= 0")


@dataclass(eq=False)
class GaResult:
    best: np.ndarray
    best_fitness: float
    trace: list  # best-so-far fitness after each generation (index 0 = initial population)
    initial_best: float


def genetic_maximize(objective, bounds, cfg: GaConfig = GaConfig(), seed: int = 0,
                     seed_individual: np.ndarray | None = None) -> GaResult:
    """Maximise a batched objective (rows of candidates -> fitness vector).

    The initial population is a Latin hypercube over ``bounds``; a supplied
    ``seed_individual`` replaces its worst member. Elites carry over
    unchanged, so the best-so-far fitness never decreases.
    """
    cfg.validate()
    bounds = np.asarray(bounds, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    d = bounds.shape[0]
    P = cfg.population
    pop = lo + latin_hypercube(P, d, np.random.default_rng([seed, 0x6C6873])) * span
    fit = np.asarray(objective(pop), dtype=np.float64)
    initial_best = float(fit.max())
    if seed_individual is not None:
        worst = int(np.argmin(fit))
        pop[worst] = np.clip(seed_individual, lo, hi)
        fit[worst] = float(np.asarray(objective(pop[worst:worst + 1]))[0])
    trace = [float(fit.max())]
    for gen in range(1, cfg.generations + 1):
        order = np.argsort(-fit, kind="stable")
        children = [pop[i].copy() for i in order[:cfg.elitism]]
        for i in range(cfg.elitism, P):
            rng = np.random.default_rng([seed, gen, i])
            parents = []
            for _ in range(2):
                cand = rng.integers(0, P, cfg.tournament)
                parents.append(pop[cand[np.argmax(fit[cand])]])
            mask = rng.random(d) < cfg.crossover_p
            child = np.where(mask, parents[0], parents[1])
            mut = rng.random(d) < cfg.mutation_p
            child = child + mut * rng.normal(0.0, cfg.mutation_sigma, d) * span
            children.append(np.clip(child, lo, hi))
        pop = np.array(children)
        new = np.empty(P)
        new[:cfg.elitism] = fit[order[:cfg.elitism]]
        new[cfg.elitism:] = objective(pop[cfg.elitism:])
        fit = new
        trace.append(max(trace[-1], float(fit.max())))
    b = int(np.argmax(fit))
    return GaResult(pop[b].copy(), float(fit[b]), trace, initial_best)


# ------------------------------------------------------------------ reliability fitting


@dataclass(frozen=True, eq=False)
class TuneSet:
    """Posterior pairs with labels, used only for fitting fusion."""

    probs_v: np.ndarray
    probs_e: np.ndarray
    labels: np.ndarray
    silence_id: int = 11
    unknown_id: int = 10

    def __post_init__(self):
        pv = np.asarray(self.probs_v, dtype=np.float64)
        pe = np.asarray(self.probs_e, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if pv.shape != pe.shape or pv.ndim != 2 or y.shape != (pv.shape[0],):
            raise ValueError("tune set arrays have inconsistent shapes")
        object.__setattr__(self, "probs_v", pv)
        object.__setattr__(self, "probs_e", pe)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.size

    def subset(self, idx) -> "TuneSet":
        return TuneSet(self.probs_v[idx], self.probs_e[idx], self.labels[idx],
                       self.silence_id, self.unknown_id)


class _Objective:
    """Vectorised tune-set accuracy for rows of the 12-value parameter layout."""

    def __init__(self, tune: TuneSet, n_best: int):
        self.logp_v = np.log(np.maximum(tune.probs_v, PROB_FLOOR))
        self.logp_e = np.log(np.maximum(tune.probs_e, PROB_FLOOR))
        self.ind = indicator_matrix(tune.probs_v, tune.probs_e, n_best)
        cat = np.vectorize(lambda c: category(c, tune.silence_id, tune.unknown_id), otypes=[np.int64])
        vcat = np.vectorize(lambda c: _vocal_adjust_category(c, tune.silence_id, tune.unknown_id),
                            otypes=[np.int64])
        self.cat_v = vcat(np.argmax(tune.probs_v, axis=1))
        self.cat_e = cat(np.argmax(tune.probs_e, axis=1))
        self.labels = tune.labels
        self.silence_id = tune.silence_id

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        return kernels.fused_accuracy(self.logp_v, self.logp_e, self.ind, self.cat_v, self.cat_e,
                                      self.labels, rows, self.silence_id)

    def stage1(self, rows8: np.ndarray) -> np.ndarray:
        rows8 = np.atleast_2d(rows8)
        return self(np.hstack([rows8, np.ones((rows8.shape[0], 4))]))


@dataclass(frozen=True)
class RbFitConfig:
    n_best: int = DEFAULT_N_BEST
    ga: GaConfig = field(default_factory=GaConfig)
    coarse_step: float = 0.1
    fine_step: float = 0.02
    relax_steps: int = 100


@dataclass(eq=False)
class RbFitResult:
    params: FusionParams
    accuracy: float
    trace: list  # (stage, step, best-so-far accuracy)
    stage1_accuracy: float
    lhs_best: float


def relax_thresholds(objective, x8: np.ndarray, steps: int = 100) -> np.ndarray:
    """Lower each gate threshold as far as it goes without losing accuracy.

    Accuracy is flat over wide threshold ranges, so the GA may return a gate
    stricter than the data requires. Preferring the least restrictive gate
    among equally accurate ones avoids needless rejections on unseen data.
    """
    x = np.array(x8, dtype=np.float64)
    if steps < 1:
        return x
    best = float(objective(x)[0])
    for _ in range(2):
        for k in range(4):
            cand = np.repeat(x[None], steps + 1, axis=0)
            cand[:, k] = np.linspace(0.0, x[k], steps + 1)
            acc = objective(cand)
            ok = np.flatnonzero(acc >= best)
            x[k] = cand[ok[0], k]
            best = max(best, float(acc[ok[0]]))
    return x


def _grid_best(objective: _Objective, base8: np.ndarray, axes: list[np.ndarray]):
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 4)
    rows = np.hstack([np.broadcast_to(base8, (grid.shape[0], 8)), grid])
    acc = objective(rows)
    best = acc.max()
    tied = np.flatnonzero(acc == best)
    # Among equally accurate settings prefer the one nearest to "no adjustment".
    dist = ((grid[tied] - 1.0) ** 2).sum(axis=1)
    pick = tied[int(np.argmin(dist))]
    return grid[pick], float(best)


def fit_rb_params(tune: TuneSet, cfg: RbFitConfig = RbFitConfig(), seed: int = 0) -> RbFitResult:
    """GA over thresholds and weights, then a two-level grid over adjustments."""
    if len(tune) == 0:
        raise ValueError("tune set is empty")
    bounds = np.array([THRESHOLD_RANGE] * 4 + [WEIGHT_RANGE] * 4)
    full = _Objective(tune, cfg.n_best)

    # Short pre-run on a subsample supplies one informed starting individual.
    rng = np.random.default_rng([seed, 0x707265])
    n_sub = max(1, int(round(cfg.ga.prerun_fraction * len(tune))))
    sub = _Objective(tune.subset(np.sort(rng.choice(len(tune), n_sub, replace=False))), cfg.n_best)
    pre_cfg = GaConfig(**{**cfg.ga.__dict__, "generations": cfg.ga.prerun_generations})
    pre = genetic_maximize(sub.stage1, bounds, pre_cfg, seed=seed + 1)

    ga = genetic_maximize(full.stage1, bounds, cfg.ga, seed=seed, seed_individual=pre.best)
    trace = [("ga", g, f) for g, f in enumerate(ga.trace)]
    base8 = relax_thresholds(full.stage1, ga.best, cfg.relax_steps)
    trace.append(("relax", 0, max(trace[-1][2], float(full.stage1(base8)[0]))))

    lo, hi = ADJUST_RANGE
    coarse = np.round(np.arange(lo, hi + 1e-9, cfg.coarse_step), 10)
    a, acc = _grid_best(full, base8, [coarse] * 4)
    trace.append(("grid-coarse", 0, max(trace[-1][2], acc)))
    fine_axes = [np.round(np.clip(np.arange(v - cfg.coarse_step, v + cfg.coarse_step + 1e-9, cfg.fine_step),
                                  lo, hi), 10) for v in a]
    fine_axes = [np.unique(ax) for ax in fine_axes]
    a2, acc2 = _grid_best(full, base8, fine_axes)
    if acc2 > acc:
        a, acc = a2, acc2
    trace.append(("grid-fine", 0, max(trace[-1][2], acc)))
    params = FusionParams.from_array(np.concatenate([base8, a]))
    return RbFitResult(params, acc, trace, ga.best_fitness, ga.initial_best)


def rb_accuracy(tune: TuneSet, params: FusionParams, n_best: int = DEFAULT_N_BEST) -> float:
    return float(_Objective(tune, n_best)(params.to_array()[None])[0])


# ------------------------------------------------------------------ MLP fusion

AUGMENTATIONS = ("none", "noise", "vocal", "drop")


def draw_augmentations(n: int, seed: int) -> np.ndarray:
    """Index into :data:`AUGMENTATIONS` for each of ``n`` instances, uniform."""
    return np.random.default_rng([seed, 0x617567]).integers(0, len(AUGMENTATIONS), n)


def scale_factors(shape, rng: np.random.Generator, low: float = 0.95, high: float = 1.05) -> np.ndarray:
    return rng.uniform(low, high, shape)


@dataclass(eq=False)
class MlpFusionModel:
    w1: np.ndarray  # (2C, H)
    b1: np.ndarray
    w2: np.ndarray  # (H, C)
    b2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.w1.shape[1] != self.b1.size or self.w2.shape != (self.b1.size, self.b2.size) \
                or self.w1.shape[0] != 2 * self.b2.size:
            raise ValueError("inconsistent MLP fusion dimensions")

    @property
    def n_classes(self) -> int:
        return self.b2.size

    @property
    def hidden(self) -> int:
        return self.b1.size

    @classmethod
    def zeros(cls, n_classes: int = 12, hidden: int = 64) -> "MlpFusionModel":
        return cls(np.zeros((2 * n_classes, hidden)), np.zeros(hidden),
                   np.zeros((hidden, n_classes)), np.zeros(n_classes))

    def predict_proba(self, probs_v: np.ndarray, probs_e: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(probs_v), np.atleast_2d(probs_e)], axis=1)
        h = np.maximum(x @ self.w1 + self.b1, 0.0)
        z = h @ self.w2 + self.b2
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def save(self, path) -> None:
        container.write_weights(path, {"kind": "mlp-fusion", "hidden": self.hidden,
                                       "n_classes": self.n_classes},
                                OrderedDict(w1=self.w1, b1=self.b1, w2=self.w2, b2=self.b2))

    @classmethod
    def load(cls, path) -> "MlpFusionModel":
        meta, t = container.read_weights(path)
        if meta.get("kind") != "mlp-fusion":
            raise container.ContainerError(f"{path}: not an MLP-fusion file")
        return cls(t["w1"], t["b1"], t["w2"], t["b2"])


def mlp_fuse(model: MlpFusionModel, vocal, echoic) -> PredictionVector:
    pv, pe = _as_probs(vocal), _as_probs(echoic)
    if pv.size != model.n_classes or pe.size != model.n_classes:
        raise ValueError(f"model expects {model.n_classes} classes per modality, got {pv.size}, {pe.size}")
    return PredictionVector(model.predict_proba(pv, pe)[0])


@dataclass(frozen=True)
class MlpConfig:
    hidden: int = 64
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 32
    scale_low: float = 0.95
    scale_high: float = 1.05


@dataclass(eq=False)
class MlpFitResult:
    model: MlpFusionModel
    losses: list
    train_accuracy: float


def train_mlp_fusion(tune: TuneSet, cfg: MlpConfig = MlpConfig(), seed: int = 0) -> MlpFitResult:
    """Adam on cross-entropy; each epoch rescales every input vector by a fresh factor."""
    n = len(tune)
    if n == 0:
        raise ValueError("training set is empty")
    C = tune.probs_v.shape[1]
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        gen = torch.Generator().manual_seed(int(seed))
        l1, l2 = nn.Linear(2 * C, cfg.hidden), nn.Linear(cfg.hidden, C)
        for layer in (l1, l2):
            bound = 1.0 / math.sqrt(layer.in_features)
            with torch.no_grad():
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.uniform_(-bound, bound, generator=gen)
        net = nn.Sequential(l1, nn.ReLU(), l2)
        opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
        x = np.concatenate([tune.probs_v, tune.probs_e], axis=1).astype(np.float32)
        y = torch.from_numpy(tune.labels)
        losses = []
        for epoch in range(cfg.epochs):
            rng = np.random.default_rng([seed, 0x6D6C70, epoch])
            s = scale_factors((n, 2), rng, cfg.scale_low, cfg.scale_high).astype(np.float32)
            xs = x * np.repeat(s, C, axis=1)
            order = rng.permutation(n)
            total = 0.0
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                loss = F.cross_entropy(net(torch.from_numpy(xs[idx])), y[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * idx.size
            if not math.isfinite(total):
                raise FloatingPointError(f"MLP fusion loss became non-finite at epoch {epoch}")
            losses.append(total / n)
        model = MlpFusionModel(l1.weight.detach().numpy().T.copy(), l1.bias.detach().numpy().copy(),
                               l2.weight.detach().numpy().T.copy(), l2.bias.detach().numpy().copy())
        acc = float(np.mean(np.argmax(model.predict_proba(tune.probs_v, tune.probs_e), axis=1) == tune.labels))
        return MlpFitResult(model, losses, acc)
    finally:
        torch.set_num_threads(threads)
