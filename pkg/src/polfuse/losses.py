"""Numerical, polarimetric and adaptively weighted total losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import Tensor
from .polarimetry import INTENSITY_CHANNEL, PolMode, intensity_extract


@dataclass(frozen=True)
class LossBreakdown:
    l_val: float
    l_phy: float
    alpha: float
    beta: float
    l_total: float


def _half_sse(diff: Tensor, n: int) -> Tensor:
    return E.scale(E.sum_squares(diff), 0.5 / n)


def loss_val(pred_residual: Tensor, target_residual, n: int | None = None) -> Tensor:
    """``1/(2N) * sum_i ||R_i - f(...)_i||^2`` over every element of the batch."""
    target = target_residual if isinstance(target_residual, Tensor) else Tensor(
        np.asarray(target_residual, dtype=pred_residual.dtype))
    if target.shape != pred_residual.shape:
        raise ValueError(f"loss_val: prediction {pred_residual.shape} vs target {target.shape}")
    n = pred_residual.shape[0] if n is None else n
    return _half_sse(E.sub(target, pred_residual), n)


def intensity_residual(i_x: np.ndarray, c_u: np.ndarray, mode: PolMode | str) -> np.ndarray:
    """``I - intensity(C_u)`` for batches ``(N, 1, H, W)`` and ``(N, 9, H, W)``."""
    c_u = np.asarray(c_u)
    return np.asarray(i_x) - np.stack([intensity_extract(c, mode) for c in c_u])[:, None]


def extract_intensity(pred_residual: Tensor, mode: PolMode | str) -> Tensor:
    ch, factor = INTENSITY_CHANNEL[PolMode(mode)]
    sl = E.slice_channels(pred_residual, ch, ch + 1)
    return sl if factor == 1.0 else E.scale(sl, factor)


def loss_phy(pred_residual: Tensor, i_x, c_u, mode: PolMode | str, n: int | None = None) -> Tensor:
    """Mismatch between the guide intensity and the fused result's intensity.

    Only the channel selected by ``mode`` ever takes part.
    """
    i_x = np.asarray(i_x)
    c_u = np.asarray(c_u)
    if pred_residual.ndim != 4 or c_u.shape != pred_residual.shape:
        raise ValueError(f"loss_phy: prediction {pred_residual.shape} vs C_u {c_u.shape}")
    if i_x.shape != (pred_residual.shape[0], 1) + pred_residual.shape[2:]:
        raise ValueError(f"loss_phy: intensity {i_x.shape} does not match {pred_residual.shape}")
    target = Tensor(intensity_residual(i_x, c_u, mode).astype(pred_residual.dtype))
    n = pred_residual.shape[0] if n is None else n
    return _half_sse(E.sub(target, extract_intensity(pred_residual, mode)), n)


def loss_weights(l_val: float, l_phy: float) -> tuple[float, float]:
    if l_val < 0 or l_phy < 0:
        raise ValueError(f"losses must be nonnegative, got {l_val}, {l_phy}")
    s = l_val + l_phy
    if s == 0:
        return 0.5, 0.5
    alpha = l_val / s
    # division can round a near-tie to exactly 0.5; keep the larger loss strictly ahead
    if alpha == 0.5 and l_val != l_phy:
        step = np.spacing(0.5)
        alpha = 0.5 + step if l_val > l_phy else 0.5 - step
    return float(alpha), 1.0 - float(alpha)


def total_loss(l_val, l_phy) -> tuple[Tensor | float, LossBreakdown]:
    """Adaptive weighting; the weights are treated as constants for backprop.

    Accepts scalar Tensors (returns a differentiable total) or plain floats.
    """
    v = float(l_val.item() if isinstance(l_val, Tensor) else l_val)
    p = float(l_phy.item() if isinstance(l_phy, Tensor) else l_phy)
    alpha, beta = loss_weights(v, p)
    total = alpha * v + beta * p
    info = LossBreakdown(v, p, alpha, beta, total)
    if isinstance(l_val, Tensor) and isinstance(l_phy, Tensor):
        return E.add(E.scale(l_val, alpha), E.scale(l_phy, beta)), info
    return total, info
