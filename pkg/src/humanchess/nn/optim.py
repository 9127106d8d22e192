from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              ) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params, state


class Adam:
    """Adam bound to a module's parameter dicts."""

    def __init__(self, module, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7):
        self.module = module
        self.state = AdamState(beta1, beta2, eps)

    def step(self, lr: float) -> None:
        params = dict(self.module.named_parameters())
        grads = dict(self.module.named_gradients())
        adam_step(params, grads, self.state, lr)


@dataclass(frozen=True)
class LrSchedule:
    initial: float
    factor: float = 0.1
    drop_steps: Tuple[int, ...] = ()
    burn_in_rate: Optional[float] = None
    burn_in_steps: int = 0

    def __post_init__(self):
        if self.initial <= 0 or self.factor <= 0 or (self.burn_in_rate is not None and self.burn_in_rate <= 0):
            raise ValueError("learning rates must be positive")

    def rate(self, step: int) -> float:
        if step < 0:
            raise ValueError("step must be >= 0")
        if self.burn_in_rate is not None and step < self.burn_in_steps:
            return self.burn_in_rate
        drops = sum(1 for s in self.drop_steps if step >= s)
        return self.initial * self.factor ** drops


def schedule_rate(schedule: LrSchedule, step: int) -> float:
    return schedule.rate(step)


MAIA_SCHEDULE = LrSchedule(0.1, 0.1, (80_000, 200_000, 360_000))
