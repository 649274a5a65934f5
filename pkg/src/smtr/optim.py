"""AdamW with decoupled weight decay, plus the one-cycle LR schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ScheduleExhaustedError, TrainingError
from .tensor import Tensor


@dataclass
class OptimState:
    """Per-parameter Adam moments and the shared hyperparameters."""

    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: OptimState, lr: float) -> None:
    """One optimizer step over every parameter, in place.

    Weight decay is decoupled: applied directly to the weights, never mixed
    into the moment estimates.
    """
    for name, p in params.items():
        if p.grad is None:
            raise TrainingError(f"parameter '{name}' has no gradient")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class LrSchedule:
    """Linear warmup to the peak, then cosine decay toward zero."""

    peak_lr: float
    total_steps: int
    warmup_steps: int
    step: int = 0

    def next_lr(self) -> float:
        lr = one_cycle_lr(self, self.step)
        self.step += 1
        return lr


def one_cycle_lr(schedule: LrSchedule, step: int) -> float:
    if step >= schedule.total_steps or step < 0:
        raise ScheduleExhaustedError(
            f"step {step} outside schedule of {schedule.total_steps} steps")
    w = schedule.warmup_steps
    if step < w:
        # first step already carries peak/warmup, not zero
        return schedule.peak_lr * (step + 1) / w
    span = max(1, schedule.total_steps - w)
    return schedule.peak_lr * 0.5 * (1.0 + math.cos(math.pi * (step - w) / span))
