"""Adam optimizer and the polynomial-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .ops import Param


@dataclass
class LrSchedule:
    """lr(step) = base_lr * (1 - min(step, total) / total)^power, power fixed at 2."""

    base_lr: float = 1e-3
    total_steps: int = 6000
    power: float = 2.0


def poly_decay_lr(step: int, schedule: LrSchedule) -> float:
    frac = min(step, schedule.total_steps) / schedule.total_steps
    return schedule.base_lr * (1.0 - frac) ** schedule.power


@dataclass
class AdamState:
    """Per-parameter moment estimates, keyed by parameter name."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: list[Param], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update from the accumulated gradients."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p in params:
        if not np.isfinite(p.grad.sum(dtype=np.float64)):
            raise NumericError(f"non-finite gradient for {p.name}")
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        p.value -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.value.dtype)
