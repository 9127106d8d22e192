"""Search-free policy/value network trained on human moves."""

from __future__ import annotations

import dataclasses
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..core import Move, PositionHistory, legal_moves
from ..datasets import shuffle_stream
from ..encoding import N_MOVES, POLICY_PLANES, encode_move, encode_policy_batch
from ..errors import DivergenceDetected, EmptyStream, NoLegalMoves
from ..nn import (
    Adam, BatchNorm2d, Conv2d, Flatten, Linear, LrSchedule, Module, ReLU, ResidualBlock, Sequential, Tanh,
    mse_loss, register_model, softmax_cross_entropy,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaiaConfig:
    blocks: int = 6
    channels: int = 64
    value_channels: int = 32
    value_hidden: int = 128
    batch_size: int = 1024
    steps: int = 400_000
    sample_prob: float = 1 / 32
    shuffle_capacity: int = 250_000
    policy_weight: float = 0.5
    value_weight: float = 0.5
    lr: float = 0.1
    lr_factor: float = 0.1
    lr_drop_steps: Tuple[int, ...] = (80_000, 200_000, 360_000)
    burn_in_lr: Optional[float] = None
    burn_in_steps: int = 0
    use_history: bool = True
    mask_illegal: bool = True
    head_gain: float = 0.01
    eval_every: int = 10_000
    log_every: int = 100

    def __post_init__(self):
        if self.blocks < 1 or self.channels < 8:
            raise ValueError("need blocks >= 1 and channels >= 8")
        if not 0 < self.sample_prob <= 1:
            raise ValueError("sample_prob must be in (0, 1]")

    @classmethod
    def desk(cls, **overrides) -> "MaiaConfig":
        base = dict(blocks=2, channels=16, value_channels=8, value_hidden=32, batch_size=64, steps=2000,
                    sample_prob=1.0, shuffle_capacity=1024, lr=2e-3, eval_every=500, log_every=50)
        base.update(overrides)
        if "lr_drop_steps" not in overrides:
            base["lr_drop_steps"] = (base["steps"] // 2, base["steps"] * 3 // 4)
        return cls(**base)

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.lr_factor, tuple(self.lr_drop_steps), self.burn_in_lr, self.burn_in_steps)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lr_drop_steps"] = list(self.lr_drop_steps)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MaiaConfig":
        d = dict(d)
        if "lr_drop_steps" in d:
            d["lr_drop_steps"] = tuple(d["lr_drop_steps"])
        return cls(**d)


@register_model("policy")
class PolicyNet(Module):
    """Residual tower with a 73x8x8 policy head and a tanh value head."""

    def __init__(self, blocks: int, channels: int, value_channels: int = 32, value_hidden: int = 128,
                 seed: int = 0, head_gain: float = 0.01, use_history: bool = True, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.config = dict(kind="policy", blocks=blocks, channels=channels, value_channels=value_channels,
                           value_hidden=value_hidden, seed=seed, head_gain=head_gain, use_history=use_history)
        self.use_history = use_history
        self.trunk = Sequential(
            [Conv2d(POLICY_PLANES, channels, 3, bias=False, rng=rng, dtype=dtype), BatchNorm2d(channels, dtype=dtype), ReLU()]
            + [ResidualBlock(channels, rng=rng, dtype=dtype) for _ in range(blocks)]
        )
        self.trunk.layers[0].input_grad = False
        self.policy_head = Sequential([
            Conv2d(channels, channels, 1, bias=False, rng=rng, dtype=dtype), BatchNorm2d(channels, dtype=dtype), ReLU(),
            Conv2d(channels, 73, 3, rng=rng, dtype=dtype, gain=head_gain), Flatten(),
        ])
        self.value_head = Sequential([
            Conv2d(channels, value_channels, 1, bias=False, rng=rng, dtype=dtype), BatchNorm2d(value_channels, dtype=dtype),
            ReLU(), Flatten(), Linear(value_channels * 64, value_hidden, rng=rng, dtype=dtype), ReLU(),
            Linear(value_hidden, 1, rng=rng, dtype=dtype, gain=head_gain), Tanh(),
        ])

    @classmethod
    def from_config(cls, cfg: MaiaConfig, seed: int = 0) -> "PolicyNet":
        return cls(cfg.blocks, cfg.channels, cfg.value_channels, cfg.value_hidden, seed, cfg.head_gain, cfg.use_history)

    @classmethod
    def from_checkpoint(cls, config: dict, tensors) -> "PolicyNet":
        c = {k: v for k, v in config.items() if k not in ("kind", "train")}
        net = cls(**c)
        net.config = dict(config)
        net.load_state_dict(tensors)
        return net

    def children(self):
        return [("trunk", self.trunk), ("policy", self.policy_head), ("value", self.value_head)]

    def forward(self, x, training=False) -> Dict[str, np.ndarray]:
        t = self.trunk.forward(x, training)
        return {"policy": self.policy_head.forward(t, training), "value": self.value_head.forward(t, training)}

    def backward(self, grads: Dict[str, np.ndarray]):
        dt = self.policy_head.backward(grads["policy"]) + self.value_head.backward(grads["value"])
        return self.trunk.backward(dt)


# ---------------------------------------------------------------------------
# inference


def _legal_indices(h: PositionHistory) -> Tuple[List[Move], np.ndarray]:
    moves = legal_moves(h.current)
    return moves, np.fromiter((encode_move(m, h.current) for m in moves), dtype=np.int64, count=len(moves))


def predict_batch(net: PolicyNet, histories: Sequence[PositionHistory], with_value: bool = False):
    """Masked predictions: list of (best move, {move: prob}) and optionally values."""
    x = encode_policy_batch(histories, net.use_history)
    out = net.forward(x, training=False)
    logits = out["policy"].astype(np.float64)
    results = []
    for i, h in enumerate(histories):
        moves, idx = _legal_indices(h)
        if not moves:
            raise NoLegalMoves(f"no legal moves in {h.current.fen()}")
        z = logits[i, idx]
        z = z - z.max()
        p = np.exp(z)
        p /= p.sum()
        best = int(np.argmax(p))  # first maximum = earliest in legal order
        results.append((moves[best], dict(zip(moves, p.tolist()))))
    if with_value:
        return results, out["value"][:, 0].astype(np.float64)
    return results


def predict_move(net, h: PositionHistory) -> Tuple[Move, Dict[Move, float]]:
    if not isinstance(net, Module):
        from ..nn import load_checkpoint
        net = load_checkpoint(net)
    return predict_batch(net, [h])[0]


class PolicyPredictor:
    """Predictor wrapper with batched evaluation."""

    def __init__(self, net: PolicyNet, name: str = "policy", batch_size: int = 256):
        self.net = net
        self.name = name
        self.batch_size = batch_size

    @classmethod
    def from_path(cls, path, name: Optional[str] = None) -> "PolicyPredictor":
        from ..nn import load_checkpoint
        return cls(load_checkpoint(path), name or str(path))

    def predict(self, h: PositionHistory) -> Move:
        return predict_batch(self.net, [h])[0][0]

    def predict_many(self, histories: Sequence[PositionHistory]) -> List[Move]:
        out: List[Move] = []
        for i in range(0, len(histories), self.batch_size):
            out.extend(m for m, _ in predict_batch(self.net, histories[i:i + self.batch_size]))
        return out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    net: PolicyNet
    metrics: List[dict] = field(default_factory=list)
    initial_policy_loss: float = float("nan")
    loss_trace: List[float] = field(default_factory=list)  # policy loss of every step


def _sampled(instances: Iterable, prob: float, rng: random.Random) -> Iterator:
    epoch_empty = True
    while True:
        seen = False
        for inst in instances:
            seen = True
            if prob >= 1.0 or rng.random() < prob:
                yield inst
        if not seen:
            if epoch_empty:
                raise EmptyStream("training stream yielded no instances")
            return
        epoch_empty = False
        if isinstance(instances, Iterator):
            return


def _batches(stream: Iterator, size: int) -> Iterator[list]:
    batch = []
    for item in stream:
        batch.append(item)
        if len(batch) == size:
            yield batch
            batch = []


def _encode_targets(batch, with_mask: bool = True) -> Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]:
    targets = np.empty(len(batch), dtype=np.int64)
    mask = np.zeros((len(batch), N_MOVES), dtype=bool) if with_mask else None
    values = np.empty((len(batch), 1), dtype=np.float32)
    for i, inst in enumerate(batch):
        pos = inst.history.current
        targets[i] = encode_move(inst.played, pos)
        if with_mask:
            mask[i, [encode_move(m, pos) for m in legal_moves(pos)]] = True
        values[i, 0] = 2.0 * inst.result_for_mover - 1.0
    return targets, mask, values


def move_match_accuracy(net: PolicyNet, instances: Sequence, batch_size: int = 256) -> float:
    if not instances:
        return float("nan")
    hits = 0
    for i in range(0, len(instances), batch_size):
        chunk = instances[i:i + batch_size]
        preds = predict_batch(net, [inst.history for inst in chunk])
        hits += sum(1 for (m, _), inst in zip(preds, chunk) if m == inst.played)
    return hits / len(instances)


def train_policy(train: Iterable, valid: Optional[Sequence], cfg: MaiaConfig, seed: int = 0,
                 callback: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train a policy/value net on MoveInstances.

    ``train`` may be re-iterable (cycled for as many epochs as the step
    budget needs) or a one-shot iterator. Each step samples moves at
    ``cfg.sample_prob``, passes them through a seeded shuffle buffer, and
    optimizes ``policy_weight * CE + value_weight * MSE`` with Adam.
    """
    rng = random.Random(seed)
    net = PolicyNet.from_config(cfg, seed)
    net.config["train"] = dict(cfg.to_dict(), seed=seed)
    opt = Adam(net)
    sched = cfg.schedule()
    stream = shuffle_stream(_sampled(train, cfg.sample_prob, rng), cfg.shuffle_capacity, rng.randrange(2 ** 32))
    valid = list(valid) if valid is not None else []
    result = TrainResult(net)

    step = 0
    for batch in _batches(stream, cfg.batch_size):
        if step >= cfg.steps:
            break
        x = encode_policy_batch([inst.history for inst in batch], cfg.use_history)
        targets, mask, values = _encode_targets(batch, cfg.mask_illegal)
        out = net.forward(x, training=True)
        p_loss, d_policy = softmax_cross_entropy(out["policy"], targets, mask)
        v_loss, d_value = mse_loss(out["value"], values)
        if not (math.isfinite(p_loss) and math.isfinite(v_loss)):
            raise DivergenceDetected(f"non-finite loss at step {step}: policy={p_loss} value={v_loss}")
        if step == 0:
            result.initial_policy_loss = p_loss
        result.loss_trace.append(p_loss)
        net.backward({"policy": cfg.policy_weight * d_policy, "value": cfg.value_weight * d_value})
        lr = sched.rate(step)
        opt.step(lr)
        step += 1

        row = None
        if step == 1 or step % cfg.log_every == 0 or step == cfg.steps:
            row = {"step": step, "lr": lr, "policy_loss": p_loss, "value_loss": v_loss, "val_accuracy": ""}
        if valid and (step % cfg.eval_every == 0 or step == cfg.steps):
            row = row or {"step": step, "lr": lr, "policy_loss": p_loss, "value_loss": v_loss}
            row["val_accuracy"] = move_match_accuracy(net, valid)
            log.info("step %d val_accuracy %.4f", step, row["val_accuracy"])
        if row is not None:
            result.metrics.append(row)
            if callback:
                callback(row)
    if step == 0:
        raise EmptyStream("no complete batch could be assembled")
    return result
