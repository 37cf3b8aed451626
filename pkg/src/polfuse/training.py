"""Minibatch Adam training of the fusion network on PatchPair sets."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import engine as E
from .datagen import PatchPair
from .engine import AdamState, Tensor
from .losses import LossBreakdown, loss_phy, loss_val, total_loss
from .model import PSFNModel, forward, upsample_baseline
from .polarimetry import PolMode

log = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "l_val", "l_phy", "alpha", "beta", "l_total", "lr"]


class NumericalError(RuntimeError):
    pass


@dataclass
class Batch:
    c_y: np.ndarray      # (N, 9, h, w)
    i_x: np.ndarray      # (N, 1, 2h, 2w)
    c_u: np.ndarray      # (N, 9, 2h, 2w)
    target: np.ndarray   # (N, 9, 2h, 2w)  hr - c_u

    def __len__(self) -> int:
        return self.c_y.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.c_y[idx], self.i_x[idx], self.c_u[idx], self.target[idx])


def stack_patches(patches: Sequence[PatchPair]) -> Batch:
    c_y = np.stack([p.lr_c3 for p in patches])
    c_u = np.stack([upsample_baseline(p.lr_c3) for p in patches])
    hr = np.stack([p.hr_c3 for p in patches])
    i_x = np.stack([p.hr_intensity for p in patches])
    return Batch(c_y, i_x, c_u, hr - c_u)


def train_step(m: PSFNModel, batch: Batch, mode: PolMode | str, adam: AdamState) -> LossBreakdown:
    dt = m.dtype
    pred = forward(m, Tensor(batch.c_y.astype(dt)), Tensor(batch.i_x.astype(dt)))
    n = len(batch)
    lv = loss_val(pred, batch.target.astype(dt), n)
    lp = loss_phy(pred, batch.i_x.astype(dt), batch.c_u.astype(dt), mode, n)
    total, info = total_loss(lv, lp)
    if not math.isfinite(info.l_total):
        E.current_tape().clear()
        raise NumericalError(f"non-finite loss at step {adam.step + 1}: {info}")
    m.zero_grad()
    E.backward(total)
    E.adam_step(m.params, m.grads(), adam)
    return info


@dataclass
class TrainSettings:
    mode: PolMode = PolMode.VV
    epochs: int = 100
    lr: float = 1e-4
    lr_halve_every: int | None = 50
    batch_size: int = 32
    max_steps: int | None = None
    seed: int = 0


def steps_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))


def train(m: PSFNModel, data: Batch, settings: TrainSettings, adam: AdamState | None = None,
          on_step: Callable[[int, LossBreakdown, float], None] | None = None) -> tuple[AdamState, list[LossBreakdown]]:
    """Run (or resume) training; ``adam.step`` is the global step counter.

    Shuffling is keyed on ``(seed, epoch)``, so a resumed run visits the same
    batches an uninterrupted one would.
    """
    adam = adam or AdamState(lr=settings.lr)
    per_epoch = steps_per_epoch(len(data), settings.batch_size)
    total_steps = settings.epochs * per_epoch
    if settings.max_steps is not None:
        total_steps = min(total_steps, settings.max_steps)
    history: list[LossBreakdown] = []
    while adam.step < total_steps:
        epoch, pos = divmod(adam.step, per_epoch)
        order = np.random.default_rng([settings.seed, epoch]).permutation(len(data))
        idx = order[pos * settings.batch_size:(pos + 1) * settings.batch_size]
        adam.lr = E.halving_lr(settings.lr, epoch, settings.lr_halve_every)
        info = train_step(m, data.take(idx), settings.mode, adam)
        history.append(info)
        if on_step is not None:
            on_step(adam.step, info, adam.lr)
    return adam, history


class LossLog:
    """Append-only CSV of per-step loss breakdowns."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        fresh = not (append and self.path.exists())
        self._fh = open(self.path, "a" if not fresh else "w", newline="")
        self._w = csv.writer(self._fh)
        if fresh:
            self._w.writerow(LOG_COLUMNS)

    def __call__(self, step: int, info: LossBreakdown, lr: float) -> None:
        self._w.writerow([step, repr(info.l_val), repr(info.l_phy), repr(info.alpha),
                          repr(info.beta), repr(info.l_total), repr(lr)])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_loss_log(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in LOG_COLUMNS}
