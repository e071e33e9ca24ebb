"""Residual CNN family shared by both modalities.

The network is a ResNet-18-style stack whose width can be divided by 1/2/4/8
and whose 3x3 block convolutions can be swapped for depthwise-separable pairs.
Parameter and multiply-add counts are computed in closed form from the same
layer table that :func:`build_model` instantiates, so the two can be checked
against each other.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import container

BASE_WIDTHS = (64, 128, 256, 512)
PROB_FLOOR = 1e-10


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class NetConfig:
    width_divisor: int = 1
    depthwise_separable: bool = False
    in_channels: int = 4
    in_shape: tuple = (120, 82)
    n_classes: int = 12
    stem_kernel: int = 3
    stage_blocks: tuple = (2, 2, 2, 2)
    base: str = "resnet18"

    def __post_init__(self):
        object.__setattr__(self, "in_shape", tuple(int(v) for v in self.in_shape))
        object.__setattr__(self, "stage_blocks", tuple(int(v) for v in self.stage_blocks))

    def validate(self) -> None:
        if self.base != "resnet18":
            raise ValueError(f"unsupported base {self.base!r}")
        if self.width_divisor not in (1, 2, 4, 8):
            raise ValueError(f"width_divisor must be 1, 2, 4 or 8, got {self.width_divisor}")
        if self.in_channels < 1 or self.n_classes < 2:
            raise ValueError("need in_channels >= 1 and n_classes >= 2")
        if len(self.in_shape) != 2 or min(self.in_shape) < 1:
            raise ValueError(f"in_shape must be two positive ints, got {self.in_shape}")
        if self.stem_kernel < 1 or self.stem_kernel % 2 == 0:
            raise ValueError(f"stem_kernel must be odd, got {self.stem_kernel}")
        if not 1 <= len(self.stage_blocks) <= 4 or min(self.stage_blocks) < 1:
            raise ValueError(f"stage_blocks must hold 1-4 positive counts, got {self.stage_blocks}")

    @property
    def widths(self) -> tuple:
        return tuple(max(1, w // self.width_divisor) for w in BASE_WIDTHS[:len(self.stage_blocks)])

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


# Row of the architecture table: one convolution, BN or linear layer.
@dataclass(frozen=True)
class Layer:
    name: str
    kind: str  # conv | bn | linear
    c_in: int
    c_out: int
    kernel: int = 1
    stride: int = 1
    groups: int = 1
    out_hw: tuple = (1, 1)

    @property
    def params(self) -> int:
        if self.kind == "conv":
            return self.kernel * self.kernel * (self.c_in // self.groups) * self.c_out
        if self.kind == "bn":
            return 2 * self.c_out
        return self.c_in * self.c_out + self.c_out

    @property
    def madd(self) -> int:
        """Multiply-adds counted as 2 operations per MAC; BN and activations excluded."""
        if self.kind == "conv":
            h, w = self.out_hw
            return 2 * self.kernel * self.kernel * (self.c_in // self.groups) * self.c_out * h * w
        if self.kind == "linear":
            return 2 * self.c_in * self.c_out
        return 0


def _down(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


def layer_table(config: NetConfig) -> list[Layer]:
    """Every parameterised layer in forward order."""
    config.validate()
    rows = []
    h, w = config.in_shape
    k = config.stem_kernel
    c0 = config.widths[0]
    rows.append(Layer("stem.conv", "conv", config.in_channels, c0, k, 1, 1, (h, w)))
    rows.append(Layer("stem.bn", "bn", c0, c0, out_hw=(h, w)))
    c_in = c0
    for s, (c_out, n_blocks) in enumerate(zip(config.widths, config.stage_blocks)):
        for b in range(n_blocks):
            stride = 2 if (s > 0 and b == 0) else 1
            h2, w2 = _down(h, stride), _down(w, stride)
            pre = f"stage{s + 1}.block{b + 1}"
            for j, (ci, st) in enumerate(((c_in, stride), (c_out, 1)), start=1):
                if config.depthwise_separable:
                    rows.append(Layer(f"{pre}.conv{j}.dw", "conv", ci, ci, 3, st, ci, (h2, w2)))
                    rows.append(Layer(f"{pre}.conv{j}.pw", "conv", ci, c_out, 1, 1, 1, (h2, w2)))
                else:
                    rows.append(Layer(f"{pre}.conv{j}", "conv", ci, c_out, 3, st, 1, (h2, w2)))
                rows.append(Layer(f"{pre}.bn{j}", "bn", c_out, c_out, out_hw=(h2, w2)))
            if stride != 1 or c_in != c_out:
                rows.append(Layer(f"{pre}.shortcut.conv", "conv", c_in, c_out, 1, stride, 1, (h2, w2)))
                rows.append(Layer(f"{pre}.shortcut.bn", "bn", c_out, c_out, out_hw=(h2, w2)))
            c_in, h, w = c_out, h2, w2
    rows.append(Layer("fc", "linear", c_in, config.n_classes))
    return rows


def count_params(config: NetConfig) -> int:
    return sum(layer.params for layer in layer_table(config))


def count_madd(config: NetConfig) -> int:
    return sum(layer.madd for layer in layer_table(config))


# ------------------------------------------------------------------ torch model


def _conv_unit(c_in, c_out, stride, ds):
    if ds:
        return nn.Sequential(OrderedDict(
            dw=nn.Conv2d(c_in, c_in, 3, stride, 1, groups=c_in, bias=False),
            pw=nn.Conv2d(c_in, c_out, 1, bias=False)))
    return nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)


class BasicBlock(nn.Module):
    def __init__(self, c_in, c_out, stride, ds):
        super().__init__()
        self.conv1 = _conv_unit(c_in, c_out, stride, ds)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = _conv_unit(c_out, c_out, 1, ds)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(OrderedDict(
                conv=nn.Conv2d(c_in, c_out, 1, stride, bias=False), bn=nn.BatchNorm2d(c_out)))

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return F.relu(y + (x if self.shortcut is None else self.shortcut(x)))


class ResNet(nn.Module):
    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        k = config.stem_kernel
        c0 = config.widths[0]
        self.register_buffer("input_mean", torch.zeros(()))
        self.register_buffer("input_std", torch.ones(()))
        self.stem = nn.Sequential(OrderedDict(
            conv=nn.Conv2d(config.in_channels, c0, k, 1, k // 2, bias=False), bn=nn.BatchNorm2d(c0)))
        stages = []
        c_in = c0
        for s, (c_out, n) in enumerate(zip(config.widths, config.stage_blocks)):
            blocks = [BasicBlock(c_in if b == 0 else c_out, c_out, 2 if (s > 0 and b == 0) else 1,
                                 config.depthwise_separable) for b in range(n)]
            stages.append(nn.Sequential(*blocks))
            c_in = c_out
        self.stages = nn.Sequential(*stages)
        self.fc = nn.Linear(c_in, config.n_classes)

    def forward(self, x):
        x = (x - self.input_mean) / self.input_std
        x = F.relu(self.stem(x))
        x = self.stages(x)
        return self.fc(x.mean(dim=(2, 3)))

    def init_weights(self, generator: torch.Generator) -> None:
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_out = m.out_channels * m.kernel_size[0] * m.kernel_size[1] // m.groups
                with torch.no_grad():
                    m.weight.normal_(0.0, math.sqrt(2.0 / fan_out), generator=generator)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Linear):
                bound = 1.0 / math.sqrt(m.in_features)
                with torch.no_grad():
                    m.weight.uniform_(-bound, bound, generator=generator)
                    m.bias.uniform_(-bound, bound, generator=generator)


@dataclass(eq=False)
class ModelWeights:
    """Named parameter and buffer arrays plus the config that shapes them."""

    config: NetConfig
    params: OrderedDict
    buffers: OrderedDict
    _module: nn.Module | None = field(default=None, repr=False)

    @classmethod
    def from_module(cls, module: ResNet) -> "ModelWeights":
        params = OrderedDict((k, v.detach().cpu().numpy().astype(np.float32).copy())
                             for k, v in module.named_parameters())
        buffers = OrderedDict((k, v.detach().cpu().numpy().astype(np.float32).copy())
                              for k, v in module.named_buffers() if not k.endswith("num_batches_tracked"))
        return cls(module.config, params, buffers)

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def module(self) -> ResNet:
        """Inference-mode torch module (cached)."""
        if self._module is None:
            m = ResNet(self.config)
            state = {k: torch.from_numpy(np.array(v)) for k, v in {**self.params, **self.buffers}.items()}
            missing, unexpected = m.load_state_dict(state, strict=False)
            bad = [k for k in missing if not k.endswith("num_batches_tracked")]
            if bad or unexpected:
                raise ValueError(f"weights do not match config: missing {bad}, unexpected {unexpected}")
            m.eval()
            self._module = m
        return self._module

    def save(self, path) -> None:
        tensors = OrderedDict()
        for k, v in self.params.items():
            tensors["param/" + k] = v
        for k, v in self.buffers.items():
            tensors["buffer/" + k] = v
        meta = {"kind": "resnet", "config": asdict(self.config)}
        container.write_weights(path, meta, tensors)

    @classmethod
    def load(cls, path) -> "ModelWeights":
        meta, tensors = container.read_weights(path)
        if meta.get("kind") != "resnet":
            raise container.ContainerError(f"{path}: not a classifier weights file")
        config = NetConfig.from_dict(meta["config"])
        params = OrderedDict((k[6:], v) for k, v in tensors.items() if k.startswith("param/"))
        buffers = OrderedDict((k[7:], v) for k, v in tensors.items() if k.startswith("buffer/"))
        w = cls(config, params, buffers)
        w.module()
        return w


@dataclass(frozen=True, eq=False)
class PredictionVector:
    probs: np.ndarray
    class_ids: tuple = ()

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise ValueError(f"prediction vector must be 1-D with >= 2 entries, got {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("prediction vector must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)
        if not self.class_ids:
            object.__setattr__(self, "class_ids", tuple(range(p.size)))

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))

    def __len__(self):
        return self.probs.size


def build_model(config: NetConfig, seed: int) -> ModelWeights:
    """He-initialised weights, reproducible from ``seed``."""
    config.validate()
    m = ResNet(config)
    m.init_weights(torch.Generator().manual_seed(int(seed)))
    return ModelWeights.from_module(m)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(config: NetConfig, shape) -> None:
    want = (config.in_channels, *config.in_shape)
    if tuple(shape) != want:
        raise ValueError(f"input shape {tuple(shape)} does not match model input {want}")


def predict_proba(weights: ModelWeights, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Class posteriors for a stack of inputs shaped (N, C, H, W)."""
    x = np.asarray(inputs, dtype=np.float32)
    _check_input(weights.config, x.shape[1:])
    m = weights.module()
    out = []
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            out.append(m(torch.from_numpy(x[i:i + batch_size])).double().numpy())
    if not out:
        return np.empty((0, weights.config.n_classes))
    return softmax(np.concatenate(out))


def forward(weights: ModelWeights, x: np.ndarray) -> PredictionVector:
    x = np.asarray(x)
    _check_input(weights.config, x.shape)
    return PredictionVector(predict_proba(weights, x[None])[0])


# ------------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainConfig:
    warmup_epochs: int = 50
    peak_lr: float = 0.1
    total_epochs: int = 1000
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    random_noise: bool = True
    random_padding: bool = True
    background_overlay: bool = True
    noise_sigma: float = 0.02
    max_shift: float = 0.10
    overlay_prob: float = 0.5

    def validate(self) -> None:
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 <= warmup_epochs < total_epochs")
        if self.peak_lr <= 0 or self.batch_size < 1:
            raise ValueError("peak_lr and batch_size must be positive")


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    """Linear warm-up from 0 to ``peak_lr`` then cosine decay to 0 at ``total_epochs``."""
    w, T = cfg.warmup_epochs, cfg.total_epochs
    if epoch < w:
        return cfg.peak_lr * epoch / w
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - w) / (T - w)))


def _shift_time(x: np.ndarray, s: int) -> np.ndarray:
    if s == 0:
        return x
    out = np.zeros_like(x)
    if s > 0:
        out[..., s:] = x[..., :-s]
    else:
        out[..., :s] = x[..., -s:]
    return out


@dataclass(eq=False)
class TrainResult:
    weights: ModelWeights
    losses: list
    train_accuracy: float


def train(config: NetConfig, cfg: TrainConfig, features: np.ndarray, labels: np.ndarray,
          overlays: np.ndarray | None = None,
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Mini-batch SGD with momentum on cross-entropy.

    ``overlays`` optionally holds precomputed background-noise variants of
    each training input, shaped (N, V, C, H, W); when background overlay is
    enabled each sample is swapped for a random variant with probability
    ``cfg.overlay_prob`` every epoch. All randomness comes from ``cfg.seed``.
    """
    cfg.validate()
    x_all = np.asarray(features, dtype=np.float32)
    y_all = np.asarray(labels, dtype=np.int64)
    if x_all.shape[0] == 0:
        raise ValueError("training set is empty")
    if y_all.shape != (x_all.shape[0],):
        raise ValueError("labels must be one per feature tensor")
    _check_input(config, x_all.shape[1:])
    use_overlay = cfg.background_overlay and overlays is not None and overlays.shape[1] > 0
    if use_overlay:
        overlays = np.asarray(overlays, dtype=np.float32)

    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        m = ResNet(config)
        m.init_weights(torch.Generator().manual_seed(int(cfg.seed)))
        mean = float(x_all.mean())
        std = float(x_all.std()) or 1.0
        m.input_mean.fill_(mean)
        m.input_std.fill_(std)
        opt = torch.optim.SGD(m.parameters(), lr=0.0, momentum=cfg.momentum,
                              weight_decay=cfg.weight_decay)
        n = x_all.shape[0]
        width = x_all.shape[-1]
        max_shift = int(round(cfg.max_shift * width))
        losses = []
        for epoch in range(cfg.total_epochs):
            for g in opt.param_groups:
                g["lr"] = learning_rate(epoch, cfg)
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(n)
            m.train()
            total = 0.0
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                xb = x_all[idx].copy()
                if use_overlay:
                    swap = rng.random(idx.size) < cfg.overlay_prob
                    pick = rng.integers(0, overlays.shape[1], idx.size)
                    for j in np.flatnonzero(swap):
                        xb[j] = overlays[idx[j], pick[j]]
                if cfg.random_padding and max_shift:
                    shifts = rng.integers(-max_shift, max_shift + 1, idx.size)
                    for j, s in enumerate(shifts):
                        xb[j] = _shift_time(xb[j], int(s))
                if cfg.random_noise:
                    sigma = rng.uniform(0.0, cfg.noise_sigma, idx.size).astype(np.float32)
                    noise = rng.standard_normal(xb.shape).astype(np.float32)
                    xb += std * sigma[:, None, None, None] * noise
                logits = m(torch.from_numpy(xb))
                loss = F.cross_entropy(logits, torch.from_numpy(y_all[idx]))
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach()) * idx.size
            mean_loss = total / n
            if not math.isfinite(mean_loss):
                raise TrainingDivergedError(epoch)
            losses.append(mean_loss)
            if progress is not None:
                progress(epoch, mean_loss)
        m.eval()
        weights = ModelWeights.from_module(m)
        acc = float(np.mean(np.argmax(predict_proba(weights, x_all), axis=1) == y_all))
        return TrainResult(weights, losses, acc)
    finally:
        torch.set_num_threads(threads)


# ------------------------------------------------------------------ gradient check


def gradient_check(weights: ModelWeights, x: np.ndarray, label: int, fraction: float = 0.01,
                   step: float = 1e-4, seed: int = 0, min_samples: int = 20) -> float:
    """Max relative error between autograd and central differences.

    Runs in float64 with batch-norm in inference mode on a random
    ``fraction`` of the trainable parameters (at least ``min_samples``).
    """
    m = ResNet(weights.config)
    m.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in
                       {**weights.params, **weights.buffers}.items()}, strict=False)
    m = m.double().eval()
    xt = torch.from_numpy(np.asarray(x, dtype=np.float64)[None])
    yt = torch.tensor([int(label)])
    params = [p for p in m.parameters()]
    loss = F.cross_entropy(m(xt), yt)
    grads = torch.autograd.grad(loss, params)
    flat = [(i, j) for i, p in enumerate(params) for j in range(p.numel())]
    rng = np.random.default_rng(seed)
    k = min(len(flat), max(min_samples, int(math.ceil(fraction * len(flat)))))
    worst = 0.0
    with torch.no_grad():
        for s in rng.choice(len(flat), size=k, replace=False):
            i, j = flat[s]
            view = params[i].view(-1)
            orig = float(view[j])
            view[j] = orig + step
            up = float(F.cross_entropy(m(xt), yt))
            view[j] = orig - step
            down = float(F.cross_entropy(m(xt), yt))
            view[j] = orig
            num = (up - down) / (2 * step)
            ana = float(grads[i].view(-1)[j])
            denom = max(abs(num) + abs(ana), 1e-8)
            worst = max(worst, abs(num - ana) / denom)
    return worst


def loss_and_gradient(weights: ModelWeights, x: np.ndarray, label: int):
    """(loss, {name: gradient}) for one input in float64, BN in inference mode."""
    m = ResNet(weights.config)
    m.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in
                       {**weights.params, **weights.buffers}.items()}, strict=False)
    m = m.double().eval()
    loss = F.cross_entropy(m(torch.from_numpy(np.asarray(x, dtype=np.float64)[None])),
                           torch.tensor([int(label)]))
    names = [n for n, _ in m.named_parameters()]
    grads = torch.autograd.grad(loss, [p for _, p in m.named_parameters()])
    return float(loss.detach()), OrderedDict((n, g.numpy()) for n, g in zip(names, grads))
