"""Kaiming initialisation and Adam."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


def kaiming_init(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> Tensor:
    """Zero-mean normal weights with std ``sqrt(2 / fan_in)``."""
    if fan_in <= 0:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray | None],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params``.

    Parameters with a ``None`` gradient are treated as having zero gradient
    (their moments still decay).
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        p.data -= update.astype(p.dtype, copy=False)


def halving_lr(base_lr: float, epoch: int, every: int | None) -> float:
    """Step schedule: the rate halves after every ``every`` epochs."""
    if not every:
        return base_lr
    return base_lr * 0.5 ** (epoch // every)
