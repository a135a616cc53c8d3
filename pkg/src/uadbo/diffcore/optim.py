"""Adam and the warmup/exponential-decay learning-rate schedule."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, arrays, **kw):
        return cls(m=[np.zeros_like(a) for a in arrays],
                   v=[np.zeros_like(a) for a in arrays], **kw)


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update, applied in place. Returns (params, state)."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {i}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass(frozen=True)
class LrSchedule:
    warmup_start: float = 1e-4
    warmup_end: float = 1e-3
    warmup_epochs: int = 20
    decay_base: float = 0.95

    def __post_init__(self):
        if not self.warmup_start < self.warmup_end:
            raise ValueError("warmup_start must be below warmup_end")
        if not 0.0 < self.decay_base < 1.0:
            raise ValueError("decay_base must lie in (0, 1)")


def lr_at(schedule, epoch):
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if epoch < schedule.warmup_epochs:
        frac = epoch / schedule.warmup_epochs
        return schedule.warmup_start + (schedule.warmup_end - schedule.warmup_start) * frac
    return schedule.warmup_end * schedule.decay_base ** (epoch - schedule.warmup_epochs)
