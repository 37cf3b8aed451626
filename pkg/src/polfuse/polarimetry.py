"""Covariance-matrix data model and deterministic polarimetric transforms.

Packed layout: a C3 (or T3) value is nine reals
``[R11, R12, I12, R13, I13, R22, R23, I23, R33]`` held on axis 0, so the same
functions accept a single pixel ``(9,)`` or a raster ``(9, H, W)``.
Unpacked Hermitian matrices put the 3x3 axes last: ``(..., 3, 3)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

N_CHANNELS = 9
R11, R12, I12, R13, I13, R22, R23, I23, R33 = range(9)
DIAGONAL = (R11, R22, R33)

SQRT2 = np.sqrt(2.0)

# Lexicographic -> Pauli basis change.
U3 = np.array([[1.0, 0.0, 1.0],
               [1.0, 0.0, -1.0],
               [0.0, SQRT2, 0.0]]) / SQRT2


class PolMode(str, enum.Enum):
    HH = "HH"
    HV = "HV"
    VV = "VV"


# Channel read by each intensity operator and the factor applied to it.
# The cross-pol diagonal stores 2|S_HV|^2, hence the halving.
INTENSITY_CHANNEL: dict[PolMode, tuple[int, float]] = {
    PolMode.HH: (R11, 1.0),
    PolMode.HV: (R22, 0.5),
    PolMode.VV: (R33, 1.0),
}


class ScatteringMatrix(NamedTuple):
    """Reciprocal monostatic scattering matrix (S_VH == S_HV)."""
    hh: complex
    hv: complex
    vv: complex


class HermitianError(ValueError):
    pass


def s_to_c3(s: ScatteringMatrix) -> np.ndarray:
    """Covariance of a single (non-averaged) scatterer, packed.

    Uses k = [S_HH, sqrt2 S_HV, S_VV]; the factor 2 on the cross-pol power is
    applied exactly rather than through sqrt2 * sqrt2.
    """
    hh, hv, vv = np.broadcast_arrays(*(np.asarray(c, dtype=np.complex128) for c in s))
    c12 = SQRT2 * hh * np.conj(hv)
    c13 = hh * np.conj(vv)
    c23 = SQRT2 * hv * np.conj(vv)
    return np.stack([np.abs(hh) ** 2, c12.real, c12.imag, c13.real, c13.imag,
                     2.0 * np.abs(hv) ** 2, c23.real, c23.imag, np.abs(vv) ** 2])


def c3_unpack(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != N_CHANNELS:
        raise ValueError(f"packed C3 needs 9 values on axis 0, got shape {v.shape}")
    m = np.zeros(v.shape[1:] + (3, 3), dtype=np.complex128)
    re, im = m.real, m.imag  # writable views; keeps signed zeros intact
    re[..., 0, 0] = v[R11]
    re[..., 1, 1] = v[R22]
    re[..., 2, 2] = v[R33]
    for (i, j), (cr, ci) in {(0, 1): (R12, I12), (0, 2): (R13, I13), (1, 2): (R23, I23)}.items():
        re[..., i, j] = v[cr]
        im[..., i, j] = v[ci]
        re[..., j, i] = v[cr]
        im[..., j, i] = -v[ci]
    return m


def c3_pack(m: np.ndarray, check: bool = True, rtol: float = 1e-9) -> np.ndarray:
    """Pack the upper triangle of Hermitian ``(..., 3, 3)`` matrices."""
    m = np.asarray(m, dtype=np.complex128)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) matrices, got {m.shape}")
    if check:
        scale = max(float(np.abs(m).max(initial=0.0)), np.finfo(float).tiny)
        dev = float(np.abs(m - np.conj(np.swapaxes(m, -1, -2))).max(initial=0.0))
        if dev > rtol * scale:
            raise HermitianError(f"matrix is not Hermitian (deviation {dev:.3g})")
    v = np.empty((N_CHANNELS,) + m.shape[:-2], dtype=np.float64)
    v[R11] = m[..., 0, 0].real
    v[R22] = m[..., 1, 1].real
    v[R33] = m[..., 2, 2].real
    v[R12], v[I12] = m[..., 0, 1].real, m[..., 0, 1].imag
    v[R13], v[I13] = m[..., 0, 2].real, m[..., 0, 2].imag
    v[R23], v[I23] = m[..., 1, 2].real, m[..., 1, 2].imag
    return v


def c3_to_t3(v: np.ndarray) -> np.ndarray:
    """Coherency matrix ``U C U^H`` in the same packed layout."""
    c = c3_unpack(v)
    t = U3 @ c @ U3.T  # U3 is real, so U^H = U^T
    return c3_pack(t, check=False)


def t3_to_c3(t: np.ndarray) -> np.ndarray:
    m = c3_unpack(t)
    return c3_pack(U3.T @ m @ U3, check=False)


def span(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v[R11] + v[R22] + v[R33]


def pauli_powers(r: np.ndarray) -> np.ndarray:
    """|P1|^2, |P2|^2, |P3|^2 on axis 0 (diagonal of T3)."""
    r = np.asarray(r, dtype=np.float64)
    co = 0.5 * (r[R11] + r[R33])
    return np.stack([co + r[R13], co - r[R13], r[R22]])


def intensity_extract(r: np.ndarray, mode: PolMode | str) -> np.ndarray:
    """Single-channel intensity of a packed raster; HV returns |S_HV|^2."""
    ch, factor = INTENSITY_CHANNEL[PolMode(mode)]
    out = np.asarray(r)[ch]
    return out * factor if factor != 1.0 else out.copy()


def multilook_downsample(r: np.ndarray, factor: int) -> np.ndarray:
    """Box-average ``factor x factor`` blocks on every channel."""
    r = np.asarray(r)
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    c, h, w = r.shape
    if h % factor or w % factor:
        raise ValueError(f"raster {h}x{w} is not divisible by {factor}")
    blocks = r.reshape(c, h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(2, 4))


# --------------------------------------------------------------------------
# polarimetric signatures

@dataclass(frozen=True)
class SignatureSurface:
    kind: str              # "co" or "cross"
    psi_deg: np.ndarray    # orientation angles, (n_psi,)
    tau_deg: np.ndarray    # ellipticity angles, (n_tau,)
    power: np.ndarray      # (n_psi, n_tau), max-normalised

    def rows(self):
        for i, psi in enumerate(self.psi_deg):
            for j, tau in enumerate(self.tau_deg):
                yield float(psi), float(tau), float(self.power[i, j])


def _jones(psi: np.ndarray, tau: np.ndarray) -> np.ndarray:
    # Rot(psi) @ [cos tau, i sin tau]
    a, b = np.cos(tau), 1j * np.sin(tau)
    c, s = np.cos(psi), np.sin(psi)
    return np.stack([c * a - s * b, s * a + c * b], axis=-1)


def _angle_grid(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    n = (hi - lo) / step
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"step {step} does not divide [{lo}, {hi}]")
    return lo + step * np.arange(int(round(n)) + 1)


def polarimetric_signature(mean: np.ndarray, kind: str = "co", step_deg: float = 1.0) -> SignatureSurface:
    """Received power over transmit (orientation, ellipticity), normalised to max 1.

    The voltage ``u_r^T S u_t`` is linear in the lexicographic scattering
    vector, ``w^T k``, so the averaged power is the quadratic form ``w^T C w*``.
    """
    if kind not in ("co", "cross"):
        raise ValueError(f"kind must be 'co' or 'cross', got {kind!r}")
    c = c3_unpack(mean)
    psi_deg = _angle_grid(-90.0, 90.0, step_deg)
    tau_deg = _angle_grid(-45.0, 45.0, step_deg)
    psi, tau = np.meshgrid(np.radians(psi_deg), np.radians(tau_deg), indexing="ij")
    ut = _jones(psi, tau)
    ur = ut if kind == "co" else _jones(psi + np.pi / 2, -tau)
    w = np.stack([ur[..., 0] * ut[..., 0],
                  (ur[..., 0] * ut[..., 1] + ur[..., 1] * ut[..., 0]) / SQRT2,
                  ur[..., 1] * ut[..., 1]], axis=-1)
    power = np.einsum("...i,ij,...j->...", w, c, np.conj(w)).real
    power = np.clip(power, 0.0, None)
    peak = power.max()
    power = power / peak if peak > 0 else np.zeros_like(power)
    return SignatureSurface(kind, psi_deg, tau_deg, power)
