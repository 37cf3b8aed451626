"""Differentiable operations for NCHW feature maps.

Convolutions run internally in NHWC as one GEMM per kernel tap, which keeps
the heavy lifting inside BLAS without materialising an im2col matrix.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, record


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# --------------------------------------------------------------------------
# convolution kernels (NHWC, weights as (k, k, c_in, c_out))

def _gather(xp: np.ndarray, taps: np.ndarray, stride: int, ho: int, wo: int) -> np.ndarray:
    k = taps.shape[0]
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    out = None
    for i in range(k):
        for j in range(k):
            part = xp[:, i:i + span_h:stride, j:j + span_w:stride, :] @ taps[i, j]
            if out is None:
                out = part
            else:
                out += part
    return out


def _scatter(g: np.ndarray, taps_t: np.ndarray, stride: int, padded_shape) -> np.ndarray:
    # taps_t: (k, k, c_out, c_in); adjoint of _gather.
    k = taps_t.shape[0]
    _, ho, wo, _ = g.shape
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    xp = np.zeros(padded_shape, dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, i:i + span_h:stride, j:j + span_w:stride, :] += g @ taps_t[i, j]
    return xp


def _tap_grads(xp: np.ndarray, g: np.ndarray, k: int, stride: int) -> np.ndarray:
    # d(loss)/d(taps) for _gather: (k, k, c_in, c_out)
    _, ho, wo, c_out = g.shape
    c_in = xp.shape[-1]
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    g2 = g.reshape(-1, c_out)
    out = np.empty((k, k, c_in, c_out), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            xs = xp[:, i:i + span_h:stride, j:j + span_w:stride, :].reshape(-1, c_in)
            np.matmul(xs.T, g2, out=out[i, j])
    return out


def _pad_nhwc(x: np.ndarray, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w, :] = x.transpose(0, 2, 3, 1)
    return xp


def _check_conv_args(x: Tensor, w: Tensor, name: str, in_axis: int) -> None:
    if x.ndim != 4:
        raise ValueError(f"{name}: input must be NCHW, got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"{name}: kernel must be square 4-D, got {w.shape}")
    if x.shape[1] != w.shape[in_axis]:
        raise ValueError(f"{name}: input has {x.shape[1]} channels, kernel expects {w.shape[in_axis]}")


def _flat_conv_views(xp: np.ndarray, k: int):
    # Stride-1 taps become contiguous row windows of the flattened padded grid.
    n, hp, wp, c = xp.shape
    flat = xp.reshape(n * hp * wp, c)
    rows = flat.shape[0] - (k - 1) * (wp + 1)
    offsets = [(i, j, i * wp + j) for i in range(k) for j in range(k)]
    return flat, rows, offsets


def _conv_s1_forward(xp, taps, ho, wo):
    n, hp, wp, _ = xp.shape
    k, c_out = taps.shape[0], taps.shape[-1]
    flat, rows, offsets = _flat_conv_views(xp, k)
    out = np.zeros((n * hp * wp, c_out), dtype=xp.dtype)
    acc = out[:rows]
    for i, j, off in offsets:
        acc += flat[off:off + rows] @ taps[i, j]
    return out.reshape(n, hp, wp, c_out)[:, :ho, :wo]


def _conv_s1_backward(xp, taps, g_nhwc, need_x, need_w):
    n, hp, wp, c_in = xp.shape
    k, c_out = taps.shape[0], taps.shape[-1]
    ho, wo = g_nhwc.shape[1:3]
    flat, rows, offsets = _flat_conv_views(xp, k)
    gfull = np.zeros((n, hp, wp, c_out), dtype=g_nhwc.dtype)
    gfull[:, :ho, :wo] = g_nhwc
    gflat = gfull.reshape(-1, c_out)[:rows]
    gx = gw = None
    if need_x:
        taps_t = np.ascontiguousarray(taps.transpose(0, 1, 3, 2))
        gxp = np.zeros_like(flat)
        for i, j, off in offsets:
            gxp[off:off + rows] += gflat @ taps_t[i, j]
        gx = gxp.reshape(n, hp, wp, c_in)
    if need_w:
        gw = np.empty((k, k, c_in, c_out), dtype=xp.dtype)
        for i, j, off in offsets:
            np.matmul(flat[off:off + rows].T, gflat, out=gw[i, j])
    return gx, gw


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation. ``w`` is ``(c_out, c_in, k, k)``."""
    _check_conv_args(x, w, "conv2d", 1)
    n, c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d: output would be {ho}x{wo}")
    if b is not None and b.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {b.shape} != ({c_out},)")

    xp = _pad_nhwc(x.data, pad)
    taps = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0))
    if stride == 1:
        y = _conv_s1_forward(xp, taps, ho, wo)
    else:
        y = _gather(xp, taps, stride, ho, wo)
    if b is not None:
        y = y + b.data
    out = Tensor(y.transpose(0, 3, 1, 2))

    def backward(g):
        g_nhwc = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        gx = gw = gb = None
        if stride == 1:
            gxp, gtaps = _conv_s1_backward(xp, taps, g_nhwc, x.requires_grad, w.requires_grad)
        else:
            gxp = gtaps = None
            if x.requires_grad:
                taps_t = np.ascontiguousarray(taps.transpose(0, 1, 3, 2))
                gxp = _scatter(g_nhwc, taps_t, stride, xp.shape)
            if w.requires_grad:
                gtaps = _tap_grads(xp, g_nhwc, k, stride)
        if gxp is not None:
            gx = np.ascontiguousarray(gxp[:, pad:pad + h, pad:pad + wd, :].transpose(0, 3, 1, 2))
        if gtaps is not None:
            gw = np.ascontiguousarray(gtaps.transpose(3, 2, 0, 1))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return record(out, inputs, backward)


def transpose_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` with the same kernel; ``w`` is ``(c_in, c_out, k, k)``."""
    _check_conv_args(x, w, "transpose_conv2d", 0)
    n, c_in, h, wd = x.shape
    _, c_out, k, _ = w.shape
    ho = (h - 1) * stride - 2 * pad + k
    wo = (wd - 1) * stride - 2 * pad + k
    if ho <= 0 or wo <= 0:
        raise ValueError(f"transpose_conv2d: output would be {ho}x{wo}")
    if b is not None and b.shape != (c_out,):
        raise ValueError(f"transpose_conv2d: bias shape {b.shape} != ({c_out},)")

    x_nhwc = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    # taps_t maps c_in -> c_out for the scatter
    taps_t = np.ascontiguousarray(w.data.transpose(2, 3, 0, 1))
    padded = (n, ho + 2 * pad, wo + 2 * pad, c_out)
    yp = _scatter(x_nhwc, taps_t, stride, padded)
    y = yp[:, pad:pad + ho, pad:pad + wo, :]
    if b is not None:
        y = y + b.data
    out = Tensor(y.transpose(0, 3, 1, 2))

    def backward(g):
        gp = _pad_nhwc(g, pad)
        gx = gw = gb = None
        if x.requires_grad:
            taps = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0))
            gx = np.ascontiguousarray(_gather(gp, taps, stride, h, wd).transpose(0, 3, 1, 2))
        if w.requires_grad:
            # weight grad of the scatter: sum over positions of x (c_in) x gp-slice (c_out)
            t = _tap_grads(gp, x_nhwc, k, stride)  # (k, k, c_out, c_in)
            gw = np.ascontiguousarray(t.transpose(3, 2, 0, 1))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return record(out, inputs, backward)


# --------------------------------------------------------------------------
# activations

def prelu(x: Tensor, slope: Tensor) -> Tensor:
    neg_part = np.minimum(x.data, 0)
    factor = np.where(x.data > 0, x.dtype.type(1), slope.data.astype(x.dtype))
    out = Tensor(x.data * factor)

    def backward(g):
        gx = g * factor if x.requires_grad else None
        ga = np.asarray(np.vdot(g, neg_part), dtype=slope.dtype).reshape(slope.shape)
        return gx, ga

    return record(out, (x, slope), backward)


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x.data))
    # saturate inside the open interval so gates never become exactly 0 or 1
    fi = np.finfo(x.dtype)
    s = np.clip(s, fi.tiny, 1.0 - fi.epsneg).astype(x.dtype, copy=False)
    out = Tensor(s)

    def backward(g):
        return (g * s * (1.0 - s),)

    return record(out, (x,), backward)


# --------------------------------------------------------------------------
# elementwise with 1-channel broadcast

def _broadcast_shapes(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape == b.shape:
        return
    if (a.ndim == 4 and b.ndim == 4 and a.shape[0] == b.shape[0]
            and a.shape[2:] == b.shape[2:] and 1 in (a.shape[1], b.shape[1])):
        return
    raise ValueError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    return g.sum(axis=1, keepdims=True)


def add(x: Tensor, y) -> Tensor:
    y = _as_tensor(y, x)
    _broadcast_shapes(x, y, "add")
    out = Tensor(x.data + y.data)

    def backward(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return record(out, (x, y), backward)


def sub(x: Tensor, y) -> Tensor:
    y = _as_tensor(y, x)
    _broadcast_shapes(x, y, "sub")
    out = Tensor(x.data - y.data)

    def backward(g):
        return _unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)

    return record(out, (x, y), backward)


def mul(x: Tensor, y) -> Tensor:
    y = _as_tensor(y, x)
    _broadcast_shapes(x, y, "mul")
    out = Tensor(x.data * y.data)

    def backward(g):
        gx = _unbroadcast(g * y.data, x.shape) if x.requires_grad else None
        gy = _unbroadcast(g * x.data, y.shape) if y.requires_grad else None
        return gx, gy

    return record(out, (x, y), backward)


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * x.dtype.type(c))

    def backward(g):
        return (g * c,)

    return record(out, (x,), backward)


def concat_channels(*xs: Tensor) -> Tensor:
    if not xs:
        raise ValueError("concat_channels needs at least one tensor")
    ref = xs[0].shape
    for t in xs:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ValueError(f"concat_channels: shape {t.shape} does not match {ref}")
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return record(out, tuple(xs), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ValueError(f"slice_channels: [{start}, {stop}) out of range for {x.shape[1]} channels")
    out = Tensor(x.data[:, start:stop])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return record(out, (x,), backward)


# --------------------------------------------------------------------------
# reductions

def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype))

    def backward(g):
        return (np.full_like(x.data, g),)

    return record(out, (x,), backward)


def sum_squares(x: Tensor) -> Tensor:
    # float64 accumulator; result cast back to the input precision
    out = Tensor(np.asarray(np.square(x.data, dtype=np.float64).sum(), dtype=x.dtype))

    def backward(g):
        return (2.0 * g * x.data,)

    return record(out, (x,), backward)
