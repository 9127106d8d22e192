"""Blunder predictors: residual CNN and fully connected net, trained on balanced batches."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..encoding import BLUNDER_BOARD_PLANES, BLUNDER_META_PLANES, MetadataVector, encode_blunder_input
from ..errors import DivergenceDetected, OneClassOnly, ShapeMismatch
from ..nn import (
    Adam, BatchNorm2d, Conv2d, Flatten, Linear, LrSchedule, Module, ReLU, ResidualBlock, Sequential, Sigmoid, Tanh,
    mse_loss, register_model,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlunderCnnConfig:
    blocks: int = 6
    channels: int = 64
    head_channels: int = 8
    metadata: bool = False
    batch_size: int = 512
    steps: int = 100_000
    lr: float = 2e-4
    lr_factor: float = 0.1
    lr_drop_steps: Tuple[int, ...] = ()
    early_stopping: bool = False
    eval_every: int = 200
    patience: int = 64
    head_gain: float = 0.1

    def __post_init__(self):
        if self.blocks < 1 or self.channels < 8:
            raise ValueError("need blocks >= 1 and channels >= 8")
        if self.batch_size % 2:
            raise ValueError("batch_size must be even for balanced batches")

    @property
    def planes(self) -> int:
        return BLUNDER_META_PLANES if self.metadata else BLUNDER_BOARD_PLANES

    @classmethod
    def deep(cls, **overrides) -> "BlunderCnnConfig":
        return cls(**dict(dict(blocks=8, channels=256), **overrides))

    @classmethod
    def desk(cls, **overrides) -> "BlunderCnnConfig":
        base = dict(blocks=2, channels=16, batch_size=64, steps=1500, lr=2e-3)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class BlunderFcConfig:
    hidden: Tuple[int, ...] = (1028, 512, 256)
    metadata: bool = False
    batch_size: int = 2000
    steps: int = 100_000
    lr: float = 2e-3
    lr_factor: float = 0.1
    lr_drop_steps: Tuple[int, ...] = ()
    early_stopping: bool = False
    eval_every: int = 200
    patience: int = 64
    head_gain: float = 0.1

    def __post_init__(self):
        if len(self.hidden) < 1:
            raise ValueError("need at least one hidden layer")
        if self.batch_size % 2:
            raise ValueError("batch_size must be even for balanced batches")

    @property
    def planes(self) -> int:
        return BLUNDER_META_PLANES if self.metadata else BLUNDER_BOARD_PLANES

    @classmethod
    def desk(cls, **overrides) -> "BlunderFcConfig":
        base = dict(hidden=(128, 64, 32), batch_size=128, steps=1500)
        base.update(overrides)
        return cls(**base)


def _config_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


class _BinaryNet(Module):
    def predict_proba(self, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
        out = [self.forward(x[i:i + batch_size], training=False).reshape(-1)
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out).astype(np.float64) if out else np.zeros(0)

    @classmethod
    def from_checkpoint(cls, config: dict, tensors):
        c = {k: v for k, v in config.items() if k not in ("kind", "train")}
        net = cls(**c)
        net.config = dict(config)
        net.load_state_dict(tensors)
        return net


@register_model("blunder_cnn")
class BlunderCNN(_BinaryNet):
    """Residual tower over 17 or 22 planes; a 1x1 head squeezed to one sigmoid unit."""

    def __init__(self, planes: int, blocks: int, channels: int, head_channels: int = 8, seed: int = 0,
                 head_gain: float = 0.1, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.config = dict(kind="blunder_cnn", planes=planes, blocks=blocks, channels=channels,
                           head_channels=head_channels, seed=seed, head_gain=head_gain)
        self.planes = planes
        self.body = Sequential(
            [Conv2d(planes, channels, 3, bias=False, rng=rng, dtype=dtype), BatchNorm2d(channels, dtype=dtype), ReLU()]
            + [ResidualBlock(channels, rng=rng, dtype=dtype) for _ in range(blocks)]
            + [Conv2d(channels, head_channels, 1, bias=False, rng=rng, dtype=dtype), BatchNorm2d(head_channels, dtype=dtype),
               ReLU(), Flatten(), Linear(head_channels * 64, 1, rng=rng, dtype=dtype, gain=head_gain), Sigmoid()]
        )
        self.body.layers[0].input_grad = False

    @classmethod
    def from_config(cls, cfg: BlunderCnnConfig, seed: int = 0) -> "BlunderCNN":
        return cls(cfg.planes, cfg.blocks, cfg.channels, cfg.head_channels, seed, cfg.head_gain)

    def children(self):
        return [("body", self.body)]

    def forward(self, x, training=False):
        if x.ndim == 2:
            x = x.reshape(x.shape[0], self.planes, 8, 8)
        if x.shape[1:] != (self.planes, 8, 8):
            raise ShapeMismatch(f"expected (N, {self.planes}, 8, 8), got {x.shape}")
        return self.body.forward(x, training)

    def backward(self, dy):
        return self.body.backward(dy)


@register_model("blunder_fc")
class BlunderFC(_BinaryNet):
    """Flattened board (1088 or 1408 inputs) through tanh hidden layers to one sigmoid unit."""

    def __init__(self, planes: int, hidden: Sequence[int], seed: int = 0, head_gain: float = 0.1, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        hidden = [int(h) for h in hidden]
        self.config = dict(kind="blunder_fc", planes=planes, hidden=hidden, seed=seed, head_gain=head_gain)
        self.planes = planes
        layers: List[Module] = [Flatten()]
        width = planes * 64
        for h in hidden:
            # tanh saturates under He scaling; gain 1/sqrt(2) gives Xavier-like variance
            layers += [Linear(width, h, rng=rng, dtype=dtype, gain=math.sqrt(0.5)), Tanh()]
            width = h
        layers += [Linear(width, 1, rng=rng, dtype=dtype, gain=head_gain), Sigmoid()]
        self.body = Sequential(layers)

    @classmethod
    def from_config(cls, cfg: BlunderFcConfig, seed: int = 0) -> "BlunderFC":
        return cls(cfg.planes, cfg.hidden, seed, cfg.head_gain)

    def children(self):
        return [("body", self.body)]

    def forward(self, x, training=False):
        if x.ndim == 4 and x.shape[1:] != (self.planes, 8, 8):
            raise ShapeMismatch(f"expected (N, {self.planes}, 8, 8), got {x.shape}")
        if x.ndim == 2 and x.shape[1] != self.planes * 64:
            raise ShapeMismatch(f"expected (N, {self.planes * 64}), got {x.shape}")
        return self.body.forward(x, training)

    def backward(self, dy):
        return self.body.backward(dy)


def make_blunder_net(cfg: Union[BlunderCnnConfig, BlunderFcConfig], seed: int = 0) -> _BinaryNet:
    if isinstance(cfg, BlunderCnnConfig):
        return BlunderCNN.from_config(cfg, seed)
    return BlunderFC.from_config(cfg, seed)


# ---------------------------------------------------------------------------
# data


def encode_blunder_dataset(instances: Iterable, table=None, metadata: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Stack labelled instances into (X of shape (N, planes, 8, 8), y in {0, 1})."""
    xs, ys = [], []
    for inst in instances:
        if inst.blunder is None:
            raise ValueError("instance has no blunder label")
        meta = MetadataVector.from_instance(inst) if metadata else None
        xs.append(encode_blunder_input(inst.history.current, meta, table))
        ys.append(float(inst.blunder))
    planes = BLUNDER_META_PLANES if metadata else BLUNDER_BOARD_PLANES
    if not xs:
        return np.zeros((0, planes, 8, 8), dtype=np.float32), np.zeros(0, dtype=np.float32)
    return np.stack(xs), np.asarray(ys, dtype=np.float32)


class BalancedSampler:
    """Draws batches with exactly half positives and half negatives (with replacement across epochs)."""

    def __init__(self, y: np.ndarray, batch_size: int, rng: np.random.Generator):
        if batch_size % 2:
            raise ValueError("batch_size must be even for balanced batches")
        y = np.asarray(y).reshape(-1)
        self.pos = np.flatnonzero(y >= 0.5)
        self.neg = np.flatnonzero(y < 0.5)
        if not len(self.pos) or not len(self.neg):
            raise OneClassOnly(f"cannot balance: {len(self.pos)} positives, {len(self.neg)} negatives")
        self.half = batch_size // 2
        self.rng = rng
        self._queues = {}

    def _draw(self, key: str, pool: np.ndarray) -> np.ndarray:
        queue = self._queues.get(key, np.zeros(0, dtype=np.int64))
        while len(queue) < self.half:
            queue = np.concatenate([queue, self.rng.permutation(pool)])
        self._queues[key] = queue[self.half:]
        return queue[: self.half]

    def batch(self) -> np.ndarray:
        idx = np.concatenate([self._draw("pos", self.pos), self._draw("neg", self.neg)])
        return self.rng.permutation(idx)


def accuracy_of(net: _BinaryNet, x: np.ndarray, y: np.ndarray, threshold: float = 0.5) -> float:
    p = net.predict_proba(x)
    return float(np.mean((p >= threshold) == (np.asarray(y).reshape(-1) >= 0.5)))


@dataclass
class BlunderResult:
    net: _BinaryNet
    metrics: List[dict] = field(default_factory=list)
    best_accuracy: float = float("nan")
    best_step: int = 0
    stopped_early: bool = False


def train_blunder(x: np.ndarray, y: np.ndarray, cfg: Union[BlunderCnnConfig, BlunderFcConfig], seed: int = 0,
                  valid: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> BlunderResult:
    """MSE on the sigmoid output against {0, 1}, with balanced batches.

    With ``valid`` the net is scored every ``cfg.eval_every`` steps. Under
    ``cfg.early_stopping`` training halts after ``cfg.patience``
    evaluations without improvement and the best-scoring weights are
    restored.
    """
    rng = np.random.default_rng(seed)
    sampler = BalancedSampler(y, cfg.batch_size, rng)
    net = make_blunder_net(cfg, seed)
    net.config["train"] = dict(_config_dict(cfg), seed=seed)
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32).reshape(-1, 1)
    opt = Adam(net)
    sched = LrSchedule(cfg.lr, cfg.lr_factor, tuple(cfg.lr_drop_steps))
    result = BlunderResult(net)
    best_state = None
    stale = 0

    for step in range(cfg.steps):
        idx = sampler.batch()
        out = net.forward(x[idx], training=True)
        loss, grad = mse_loss(out, y[idx])
        if not math.isfinite(loss):
            raise DivergenceDetected(f"non-finite loss at step {step}")
        net.backward(grad)
        lr = sched.rate(step)
        opt.step(lr)
        done = step + 1
        if valid is not None and (done % cfg.eval_every == 0 or done == cfg.steps):
            acc = accuracy_of(net, *valid)
            result.metrics.append({"step": done, "lr": lr, "loss": loss, "val_accuracy": acc})
            if not acc <= result.best_accuracy:  # also true on the first (nan) comparison
                result.best_accuracy, result.best_step = acc, done
                best_state = {k: v.copy() for k, v in net.state_dict().items()}
                stale = 0
            else:
                stale += 1
                if cfg.early_stopping and stale >= cfg.patience:
                    result.stopped_early = True
                    break
        elif done % 100 == 0:
            result.metrics.append({"step": done, "lr": lr, "loss": loss, "val_accuracy": ""})
    if best_state is not None and cfg.early_stopping:
        net.load_state_dict(best_state)
    return result
