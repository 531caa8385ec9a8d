"""Learning-rate schedule and SGD / Adam update rules."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import ParamStore


@dataclass(frozen=True)
class Schedule:
    """Linear warmup from ``lr_start`` to ``lr_peak``, then half-cosine to ``lr_min``.

    Step-level granularity; epoch boundaries fall on multiples of
    ``steps_per_epoch``.
    """

    lr_start: float
    lr_peak: float
    lr_min: float
    warmup_epochs: int
    total_epochs: int
    steps_per_epoch: int = 1

    def __post_init__(self):
        if not 0 < self.warmup_epochs < self.total_epochs:
            raise ValueError("need 0 < warmup_epochs < total_epochs")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if self.lr_start > self.lr_peak or self.lr_min > self.lr_peak:
            raise ValueError("lr_start and lr_min must not exceed lr_peak")

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch


PRETRAIN_SCHEDULE = dict(lr_start=1e-4, lr_peak=0.3, lr_min=1e-4, warmup_epochs=10, total_epochs=100)
DOWNSTREAM_SCHEDULE = dict(lr_start=1e-5, lr_peak=1e-3, lr_min=1e-5, warmup_epochs=10, total_epochs=100)


def lr_at(s: Schedule, global_step: int) -> float:
    if not 0 <= global_step <= s.total_steps:
        raise ValueError(f"step {global_step} outside [0, {s.total_steps}]")
    warm = s.warmup_steps
    if global_step <= warm:
        return s.lr_start + (s.lr_peak - s.lr_start) * global_step / warm
    progress = (global_step - warm) / (s.total_steps - warm)
    return s.lr_min + 0.5 * (s.lr_peak - s.lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptState:
    first: dict = field(default_factory=dict)  # momentum / Adam first moment
    second: dict = field(default_factory=dict)  # Adam second moment
    step: int = 0


def _check(store: ParamStore, grads: dict):
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != store.params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {store.params[name].shape}")


def sgd_step(store: ParamStore, grads: dict, state: OptState, lr: float,
             momentum: float = 0.9, weight_decay: float = 1e-4) -> None:
    """In-place SGD with heavy-ball momentum and decoupled-from-bias weight decay.

    ``g' = g + wd * theta`` (weights only), ``v = m * v + g'``,
    ``theta -= lr * v``.
    """
    _check(store, grads)
    for name, g in grads.items():
        if not store.requires_grad.get(name, True):
            continue
        p = store.params[name]
        g = g.astype(np.float64)
        if weight_decay and ParamStore.decays(name):
            g = g + weight_decay * p
        v = state.first.get(name)
        v = g if v is None else momentum * v + g
        state.first[name] = v
        store.params[name] = (p - lr * v).astype(p.dtype)
    state.step += 1


def adam_step(store: ParamStore, grads: dict, state: OptState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """In-place bias-corrected Adam update (optional L2 on weights)."""
    _check(store, grads)
    state.step += 1
    t = state.step
    for name, g in grads.items():
        if not store.requires_grad.get(name, True):
            continue
        p = store.params[name]
        g = g.astype(np.float64)
        if weight_decay and ParamStore.decays(name):
            g = g + weight_decay * p
        m = beta1 * state.first.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * state.second.get(name, 0.0) + (1 - beta2) * g * g
        state.first[name], state.second[name] = m, v
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        store.params[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)


def schedule_to_dict(s: Schedule) -> dict:
    return asdict(s)
