"""Figure export for reports. Everything renders off-screen to files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import polarimetry as pol  # noqa: E402

_RC = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.titlesize": 10,
    "image.cmap": "viridis",
    # fixed hash salt so repeated renders produce identical files
    "svg.hashsalt": "polfuse",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def pauli_rgb(r: np.ndarray, percentile: float = 99.0) -> np.ndarray:
    """8-bit (H, W, 3) composite with (R, G, B) = (p2, p3, p1).

    Each channel is clipped at its own percentile and square-root stretched.
    """
    p = pol.pauli_powers(r)
    out = np.empty(p.shape[1:] + (3,), dtype=np.uint8)
    for dst, src in enumerate((1, 2, 0)):
        ch = np.maximum(p[src], 0.0)
        hi = np.percentile(ch, percentile)
        scaled = np.clip(ch / hi, 0.0, 1.0) if hi > 0 else np.zeros_like(ch)
        out[..., dst] = np.round(np.sqrt(scaled) * 255.0).astype(np.uint8)
    return out


def write_ppm(path, rgb: np.ndarray) -> Path:
    """Binary portable pixmap (P6)."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {rgb.shape}")
    h, w, _ = rgb.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
    return path


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 pixmap")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def plot_pauli(r: np.ndarray, path, title: str = "Pauli RGB") -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(pauli_rgb(r), interpolation="nearest")
        ax.set_title(title)
        ax.set_axis_off()
        return _save(fig, path)


def plot_signature(surf: pol.SignatureSurface, path) -> Path:
    with plt.rc_context(_RC):
        fig = plt.figure(figsize=(5, 4))
        ax = fig.add_subplot(projection="3d")
        tt, pp = np.meshgrid(surf.tau_deg, surf.psi_deg)
        ax.plot_surface(pp, tt, surf.power, cmap="viridis", linewidth=0, antialiased=False)
        ax.set_xlabel(r"orientation $\psi$ (deg)")
        ax.set_ylabel(r"ellipticity $\tau$ (deg)")
        ax.set_zlabel("normalised power")
        ax.set_zlim(0, 1)
        ax.set_title(f"{surf.kind}-pol signature")
        return _save(fig, path)


def plot_enl(values_by_label: dict[str, np.ndarray], path, log: bool = True) -> Path:
    labels = list(values_by_label)
    stack = [np.log10(values_by_label[k]) if log else values_by_label[k] for k in labels]
    lo = min(float(np.percentile(v, 1)) for v in stack)
    hi = max(float(np.percentile(v, 99)) for v in stack)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(labels), figsize=(3.2 * len(labels), 3.2), squeeze=False)
        for ax, lab, v in zip(axes[0], labels, stack):
            im = ax.imshow(v, vmin=lo, vmax=hi, interpolation="nearest")
            ax.set_title(f"{lab}  (mean ENL {values_by_label[lab].mean():.2f})")
            ax.set_axis_off()
        fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8, label="log10 ENL" if log else "ENL")
        return _save(fig, path)


def plot_y4r(powers: np.ndarray, path) -> Path:
    names = ("Ps (single)", "Pd (double)", "Pv (volume)", "Pc (helix)")
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 4, figsize=(12, 3.2))
        for ax, name, p in zip(axes, names, powers):
            hi = float(np.percentile(p, 99)) or 1.0
            ax.imshow(p, vmin=0, vmax=hi, cmap="magma", interpolation="nearest")
            ax.set_title(name)
            ax.set_axis_off()
        return _save(fig, path)


def plot_loss_curve(log: dict[str, np.ndarray], path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for key in ("l_total", "l_val", "l_phy"):
            ax.semilogy(log["step"], np.maximum(log[key], 1e-30), label=key, lw=1)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        ax.grid(alpha=0.3)
        return _save(fig, path)


def plot_eval(reports, path) -> Path:
    from .metrics import PSNR_CAP

    chans = ("p1", "p2", "p3", "mean")
    x = np.arange(len(chans))
    width = 0.8 / max(len(reports), 1)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for i, rep in enumerate(reports):
            vals = [min(v, PSNR_CAP) for v in (*rep.psnr, rep.psnr_mean)]
            ax.bar(x + i * width, vals, width, label=rep.label)
        ax.set_xticks(x + width * (len(reports) - 1) / 2, chans)
        ax.set_ylabel("PSNR (dB)")
        ax.legend(frameon=False)
        return _save(fig, path)
