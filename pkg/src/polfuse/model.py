"""The fusion network: SinSAR feature extraction, PolSAR super-resolution,
the two cross-attention branches, and the residual reconstruction head."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import engine as E
from . import polarimetry as pol
from .container import ContainerError, read_raster, write_raster
from .engine import AdamState, Tensor

# channel pairs (real, imag) of the packed C3 vector that form complex entries
COMPLEX_PAIRS = {"c12": (pol.R12, pol.I12), "c13": (pol.R13, pol.I13), "c23": (pol.R23, pol.I23)}
REAL_CHANNELS = {"r11": pol.R11, "r22": pol.R22, "r33": pol.R33}


@dataclass(frozen=True)
class PSFNConfig:
    width: int = 64
    residual_units: int = 5
    complex_width: int = 16
    prelu_init: float = 0.25
    upscale: int = 2

    def validate(self) -> None:
        if self.width <= 0 or self.complex_width <= 0:
            raise ValueError("feature widths must be positive")
        if self.residual_units < 0:
            raise ValueError("residual_units must be >= 0")
        if self.upscale != 2:
            raise ValueError("only x2 fusion is supported")


class PSFNModel:
    """Named parameter tensors plus the config that shaped them."""

    def __init__(self, cfg: PSFNConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray | None]:
        return {k: p.grad for k, p in self.params.items()}


# --------------------------------------------------------------------------
# construction

def _layout(cfg: PSFNConfig) -> list[tuple[str, str, tuple, int]]:
    """(name, kind, shape, fan_in) for every parameter, in a fixed order."""
    w, cw = cfg.width, cfg.complex_width
    spec: list[tuple[str, str, tuple, int]] = []

    def conv(name, c_in, c_out, k=3, bias=True):
        spec.append((name + ".w", "kaiming", (c_out, c_in, k, k), c_in * k * k))
        if bias:
            spec.append((name + ".b", "zero", (c_out,), 0))

    def tconv(name, c_in, c_out, k=4, stride=2):
        # effective fan-in: each output pixel sees c_in * (k / stride)^2 taps
        spec.append((name + ".w", "kaiming", (c_in, c_out, k, k), c_in * (k // stride) ** 2))
        spec.append((name + ".b", "zero", (c_out,), 0))

    def act(name):
        spec.append((name, "prelu", (), 0))

    def resunits(prefix):
        for i in range(cfg.residual_units):
            conv(f"{prefix}.res{i}.conv1", w, w)
            act(f"{prefix}.res{i}.act")
            conv(f"{prefix}.res{i}.conv2", w, w)

    conv("hsfe.conv1", 1, w); act("hsfe.act1")
    resunits("hsfe")
    conv("hsfe.sa", w, 1)
    conv("hsfe.conv2", w, w); act("hsfe.act2")

    for name in COMPLEX_PAIRS:
        conv(f"lpsr.cb.{name}.re", 1, cw, bias=False)
        conv(f"lpsr.cb.{name}.im", 1, cw, bias=False)
    for name in REAL_CHANNELS:
        conv(f"lpsr.cb.{name}", 1, cw)
    conv("lpsr.cb.merge", 9 * cw, w, k=1); act("lpsr.cb.act")
    tconv("lpsr.up", w, w); act("lpsr.up_act")
    resunits("lpsr")

    tconv("hssa.up", 9, w); act("hssa.up_act")
    conv("hssa.conv", w, w); act("hssa.act")
    conv("hssa.att", w, 1)

    conv("lpca.conv", w, w); act("lpca.act")
    tconv("lpca.up", 9, w); act("lpca.up_act")

    conv("rec.conv1", 3 * w, w); act("rec.act")
    conv("rec.conv2", w, 9)
    return spec


def build_model(cfg: PSFNConfig = PSFNConfig(), rng: np.random.Generator | None = None,
                dtype=np.float32) -> PSFNModel:
    cfg.validate()
    rng = np.random.default_rng(0) if rng is None else rng
    params: dict[str, Tensor] = {}
    for name, kind, shape, fan_in in _layout(cfg):
        if kind == "kaiming":
            p = E.kaiming_init(shape, fan_in, rng, dtype=dtype)
        elif kind == "prelu":
            p = Tensor(np.full(shape, cfg.prelu_init, dtype=dtype), requires_grad=True)
        else:
            p = E.zeros_param(shape, dtype=dtype)
        p.name = name
        params[name] = p
    return PSFNModel(cfg, params)


# --------------------------------------------------------------------------
# layers

def _conv(m: PSFNModel, name: str, x: Tensor, pad: int = 1) -> Tensor:
    b = m.params.get(name + ".b")
    return E.conv2d(x, m[name + ".w"], b, stride=1, pad=pad)


def _up(m: PSFNModel, name: str, x: Tensor) -> Tensor:
    return E.transpose_conv2d(x, m[name + ".w"], m[name + ".b"], stride=2, pad=1)


def _act(m: PSFNModel, name: str, x: Tensor) -> Tensor:
    return E.prelu(x, m[name])


def residual_unit(m: PSFNModel, prefix: str, x: Tensor) -> Tensor:
    y = _conv(m, prefix + ".conv1", x)
    y = _act(m, prefix + ".act", y)
    y = _conv(m, prefix + ".conv2", y)
    return E.add(x, y)


def _check_input(x: Tensor, channels: int, what: str) -> None:
    if x.ndim != 4 or x.shape[1] != channels:
        raise ValueError(f"{what} must be N x {channels} x H x W, got {x.shape}")


def hsfe_trunk(m: PSFNModel, i_x: Tensor) -> Tensor:
    """Input conv and residual units; the features the spatial attention reweights."""
    _check_input(i_x, 1, "HR intensity")
    f = _act(m, "hsfe.act1", _conv(m, "hsfe.conv1", i_x))
    for i in range(m.cfg.residual_units):
        f = residual_unit(m, f"hsfe.res{i}", f)
    return f


def spatial_attention(m: PSFNModel, f: Tensor) -> Tensor:
    return E.mul(f, E.sigmoid(_conv(m, "hsfe.sa", f)))


def hsfe_forward(m: PSFNModel, i_x: Tensor) -> Tensor:
    f = spatial_attention(m, hsfe_trunk(m, i_x))
    return _act(m, "hsfe.act2", _conv(m, "hsfe.conv2", f))


def complex_block(m: PSFNModel, c_y: Tensor) -> Tensor:
    """Complex convolutions on the off-diagonal pairs, real ones on the diagonal,
    then a 1x1 merge to the feature width."""
    _check_input(c_y, 9, "LR C3")
    feats = []
    for name, (ch_re, ch_im) in COMPLEX_PAIRS.items():
        xr = E.slice_channels(c_y, ch_re, ch_re + 1)
        xi = E.slice_channels(c_y, ch_im, ch_im + 1)
        wr, wi = m[f"lpsr.cb.{name}.re.w"], m[f"lpsr.cb.{name}.im.w"]
        out_r = E.sub(E.conv2d(xr, wr, pad=1), E.conv2d(xi, wi, pad=1))
        out_i = E.add(E.conv2d(xi, wr, pad=1), E.conv2d(xr, wi, pad=1))
        feats += [out_r, out_i]
    for name, ch in REAL_CHANNELS.items():
        feats.append(_conv(m, f"lpsr.cb.{name}", E.slice_channels(c_y, ch, ch + 1)))
    merged = _conv(m, "lpsr.cb.merge", E.concat_channels(*feats), pad=0)
    return _act(m, "lpsr.cb.act", merged)


def lpsr_forward(m: PSFNModel, c_y: Tensor) -> Tensor:
    f = complex_block(m, c_y)
    f = _act(m, "lpsr.up_act", _up(m, "lpsr.up", f))
    for i in range(m.cfg.residual_units):
        f = residual_unit(m, f"lpsr.res{i}", f)
    return f


def _check_pair(c_y: Tensor, f_hs: Tensor) -> None:
    _check_input(c_y, 9, "LR C3")
    if f_hs.ndim != 4 or f_hs.shape[0] != c_y.shape[0] or f_hs.shape[2:] != tuple(2 * s for s in c_y.shape[2:]):
        raise ValueError(f"HR features {f_hs.shape} do not match LR input {c_y.shape}")


def hssa_weight(m: PSFNModel, f_hs: Tensor) -> Tensor:
    return E.sigmoid(_conv(m, "hssa.att", f_hs))


def hssa_forward(m: PSFNModel, c_y: Tensor, f_hs: Tensor) -> Tensor:
    _check_pair(c_y, f_hs)
    lp = _act(m, "hssa.up_act", _up(m, "hssa.up", c_y))
    lp = _act(m, "hssa.act", _conv(m, "hssa.conv", lp))
    return E.mul(lp, hssa_weight(m, f_hs))


def lpca_weight(m: PSFNModel, c_y: Tensor) -> Tensor:
    return E.sigmoid(_act(m, "lpca.up_act", _up(m, "lpca.up", c_y)))


def lpca_forward(m: PSFNModel, c_y: Tensor, f_hs: Tensor) -> Tensor:
    _check_pair(c_y, f_hs)
    hs = _act(m, "lpca.act", _conv(m, "lpca.conv", f_hs))
    return E.mul(hs, lpca_weight(m, c_y))


def reconstruct(m: PSFNModel, f_lpsr: Tensor, f_hs: Tensor, f_hssa: Tensor, f_lpca: Tensor) -> Tensor:
    base = E.add(f_lpsr, f_hs)
    fusion = E.concat_channels(f_hssa, f_lpca)
    h = _act(m, "rec.act", _conv(m, "rec.conv1", E.concat_channels(base, fusion)))
    return _conv(m, "rec.conv2", h)


def forward(m: PSFNModel, c_y: Tensor, i_x: Tensor) -> Tensor:
    """Predicted residual (N x 9 x 2h x 2w) for LR C3 ``c_y`` and HR intensity ``i_x``."""
    f_hs = hsfe_forward(m, i_x)
    _check_pair(c_y, f_hs)
    f_lp = lpsr_forward(m, c_y)
    return reconstruct(m, f_lp, f_hs, hssa_forward(m, c_y, f_hs), lpca_forward(m, c_y, f_hs))


# --------------------------------------------------------------------------
# raster-level helpers

def _bilinear_axis(a: np.ndarray, axis: int) -> np.ndarray:
    # half-pixel aligned x2: even outputs lean on the previous sample, odd on the next
    axis %= a.ndim
    n = a.shape[axis]
    idx = np.arange(n)
    prev = np.take(a, np.clip(idx - 1, 0, n - 1), axis=axis)
    nxt = np.take(a, np.clip(idx + 1, 0, n - 1), axis=axis)
    even = a + 0.25 * (prev - a)
    odd = a + 0.25 * (nxt - a)
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(a.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def upsample_baseline(c_y: np.ndarray) -> np.ndarray:
    """Fixed bilinear x2 upsampling per channel (clamped edges)."""
    c_y = np.asarray(c_y, dtype=np.float64)
    return _bilinear_axis(_bilinear_axis(c_y, -2), -1)


def predict_residual(m: PSFNModel, c_y: np.ndarray, i_x: np.ndarray) -> np.ndarray:
    """Inference-only forward on numpy batches ``(N, 9, h, w)``, ``(N, 1, 2h, 2w)``."""
    dt = m.dtype
    with E.no_grad():
        out = forward(m, Tensor(np.asarray(c_y, dtype=dt)), Tensor(np.asarray(i_x, dtype=dt)))
    return out.data.astype(np.float64)


def _tile_starts(n: int, tile: int, step: int) -> list[int]:
    if n <= tile:
        return [0]
    starts = list(range(0, n - tile + 1, step))
    if starts[-1] != n - tile:
        starts.append(n - tile)
    return starts


def clamp_diagonal(r: np.ndarray) -> np.ndarray:
    r = r.copy()
    for ch in pol.DIAGONAL:
        np.maximum(r[ch], 0.0, out=r[ch])
    return r


def _worker_count() -> int:
    env = os.environ.get("POLFUSE_THREADS")
    if env:
        return max(1, int(env))
    return 1


def fuse_raster(m: PSFNModel, c_y: np.ndarray, i_x: np.ndarray, tile: int = 20, overlap: int = 4,
                batch: int = 16, workers: int | None = None) -> np.ndarray:
    """Fuse a whole LR C3 raster with its HR intensity by overlapping tiles.

    ``tile`` and ``overlap`` are in LR pixels. Residuals are averaged where
    tiles overlap and added to the bilinear baseline; diagonal powers are
    clamped at zero on the way out.
    """
    c_y = np.asarray(c_y, dtype=np.float64)
    i_x = np.asarray(i_x, dtype=np.float64)
    if i_x.ndim == 2:
        i_x = i_x[None]
    if c_y.ndim != 3 or c_y.shape[0] != 9:
        raise ValueError(f"LR raster must be (9, h, w), got {c_y.shape}")
    _, h, w = c_y.shape
    if i_x.shape != (1, 2 * h, 2 * w):
        raise ValueError(f"HR intensity {i_x.shape} does not match LR raster {c_y.shape}")
    if overlap >= tile:
        raise ValueError("overlap must be smaller than the tile")
    th, tw = min(tile, h), min(tile, w)
    boxes = [(y, x) for y in _tile_starts(h, th, tile - overlap) for x in _tile_starts(w, tw, tile - overlap)]

    def run(chunk):
        cy = np.stack([c_y[:, y:y + th, x:x + tw] for y, x in chunk])
        ix = np.stack([i_x[:, 2 * y:2 * (y + th), 2 * x:2 * (x + tw)] for y, x in chunk])
        return predict_residual(m, cy, ix)

    chunks = [boxes[i:i + batch] for i in range(0, len(boxes), batch)]
    n_workers = workers or _worker_count()
    if n_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            results = list(ex.map(run, chunks))
    else:
        results = [run(c) for c in chunks]

    acc = np.zeros((9, 2 * h, 2 * w))
    cnt = np.zeros((2 * h, 2 * w))
    for chunk, res in zip(chunks, results):
        for (y, x), r in zip(chunk, res):
            acc[:, 2 * y:2 * (y + th), 2 * x:2 * (x + tw)] += r
            cnt[2 * y:2 * (y + th), 2 * x:2 * (x + tw)] += 1
    return clamp_diagonal(upsample_baseline(c_y) + acc / cnt)


# --------------------------------------------------------------------------
# checkpoints (PFC3, one channel, all tensors concatenated along the width)

def save_checkpoint(path, m: PSFNModel, adam: AdamState | None = None, extra: dict | None = None) -> None:
    chunks, index, offset = [], [], 0
    groups = [("param", {k: p.data for k, p in m.params.items()})]
    if adam is not None:
        groups += [("adam_m", adam.m), ("adam_v", adam.v)]
    dt = np.dtype(m.dtype)
    for group, tensors in groups:
        for name, arr in tensors.items():
            flat = np.asarray(arr, dtype=dt).ravel()
            index.append({"group": group, "name": name, "shape": list(arr.shape),
                          "offset": offset, "byte_offset": offset * dt.itemsize, "count": flat.size})
            chunks.append(flat)
            offset += flat.size
    meta = {"kind": "psfn-checkpoint", "config": asdict(m.cfg), "tensors": index}
    if adam is not None:
        meta["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                        "eps": adam.eps, "step": adam.step}
    if extra:
        meta["extra"] = extra
    payload = np.concatenate(chunks) if chunks else np.zeros(0, dtype=dt)
    write_raster(path, payload.reshape(1, 1, -1), meta, dtype=dt)


def load_checkpoint(path) -> tuple[PSFNModel, AdamState | None, dict]:
    data, meta = read_raster(path)
    if meta.get("kind") != "psfn-checkpoint":
        raise ContainerError(f"{path} is not a model checkpoint")
    flat = data.ravel()
    cfg = PSFNConfig(**meta["config"])
    params: dict[str, Tensor] = {}
    adam = AdamState(**meta["adam"]) if "adam" in meta else None
    for rec in meta["tensors"]:
        arr = flat[rec["offset"]:rec["offset"] + rec["count"]].reshape(rec["shape"]).copy()
        if rec["group"] == "param":
            params[rec["name"]] = Tensor(arr, requires_grad=True, name=rec["name"])
        elif adam is not None:
            moments = adam.m if rec["group"] == "adam_m" else adam.v
            moments[rec["name"]] = arr
    expected = [name for name, *_ in _layout(cfg)]
    if list(params) != expected:
        raise ContainerError(f"{path}: parameter set does not match its config")
    return PSFNModel(cfg, params), adam, meta.get("extra", {})
