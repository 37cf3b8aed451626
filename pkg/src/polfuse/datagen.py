"""Synthetic PolSAR scenes, Wishart speckle, and (HR, LR, intensity) patch sets."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from . import polarimetry as pol
from .container import ContainerError, read_raster, write_raster
from .polarimetry import PolMode

PATCH_HR = 40
PATCH_LR = 20
FACTOR = 2


def _lexicographic(hh: float, hv2: float, vv: float, rho: complex) -> np.ndarray:
    """Reflection-symmetric mean: powers |S_HH|^2, 2|S_HV|^2, |S_VV|^2 and HH/VV correlation."""
    c = np.zeros((3, 3), dtype=complex)
    c[0, 0], c[1, 1], c[2, 2] = hh, hv2, vv
    c[0, 2] = rho * np.sqrt(hh * vv)
    c[2, 0] = np.conj(c[0, 2])
    return pol.c3_pack(c)


SURFACE = _lexicographic(1.0, 0.05, 1.0, 0.7)
DOUBLE_BOUNCE = _lexicographic(1.2, 0.1, 0.6, -0.75)
VOLUME = pol.c3_pack(np.array([[3, 0, 1], [0, 2, 0], [1, 0, 3]], dtype=complex) / 8.0)

BUILTIN_CLASSES = {"surface": SURFACE, "double_bounce": DOUBLE_BOUNCE, "volume": VOLUME}


@dataclass
class SceneClass:
    name: str
    mean: np.ndarray
    fraction: float


def default_palette() -> list[SceneClass]:
    return [SceneClass("volume", VOLUME.copy(), 0.5),
            SceneClass("surface", SURFACE.copy(), 0.3),
            SceneClass("double_bounce", DOUBLE_BOUNCE.copy(), 0.2)]


@dataclass
class SceneSpec:
    height: int = 256
    width: int = 256
    looks: int = 4
    layout_seed: int = 0
    texture_sigma: float = 0.3
    palette: list[SceneClass] = field(default_factory=default_palette)

    def validate(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ValueError("scene dimensions must be positive")
        if self.height % FACTOR or self.width % FACTOR:
            raise ValueError(f"scene dims must be divisible by {FACTOR}")
        if self.looks < 1:
            raise ValueError("looks must be >= 1")
        if self.texture_sigma < 0:
            raise ValueError("texture_sigma must be >= 0")
        if not self.palette:
            raise ValueError("palette is empty")
        total = sum(c.fraction for c in self.palette)
        if abs(total - 1.0) > 1e-9 or any(c.fraction < 0 for c in self.palette):
            raise ValueError(f"class fractions must be nonnegative and sum to 1, got {total}")
        for c in self.palette:
            check_psd(c.mean, what=f"class {c.name!r}")

    def digest(self) -> str:
        d = asdict(self)
        d["palette"] = [{"name": c.name, "mean": np.asarray(c.mean).tolist(), "fraction": c.fraction}
                        for c in self.palette]
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def check_psd(mean: np.ndarray, what: str = "mean") -> None:
    m = pol.c3_unpack(mean)
    lam = np.linalg.eigvalsh(m)
    tr = np.trace(m, axis1=-2, axis2=-1).real
    if np.any(lam[..., 0] < -1e-12 * np.maximum(tr, np.finfo(float).tiny)):
        raise ValueError(f"{what} is not positive semidefinite")


def _class_map(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Background (class 0) with rectangles and elliptical blobs for the others."""
    h, w = spec.height, spec.width
    cmap = np.zeros((h, w), dtype=np.int32)
    yy, xx = np.mgrid[0:h, 0:w]
    for idx, cls in enumerate(spec.palette[1:], start=1):
        target = cls.fraction * h * w
        placed, attempts = 0, 0
        while placed < target and attempts < 400:
            attempts += 1
            rh = int(rng.integers(max(2, h // 12), max(3, h // 4) + 1))
            rw = int(rng.integers(max(2, w // 12), max(3, w // 4) + 1))
            y0 = int(rng.integers(0, h - rh + 1))
            x0 = int(rng.integers(0, w - rw + 1))
            if attempts % 2:
                region = np.zeros((h, w), dtype=bool)
                region[y0:y0 + rh, x0:x0 + rw] = True
            else:
                cy, cx = y0 + rh / 2, x0 + rw / 2
                region = ((yy - cy) / (rh / 2)) ** 2 + ((xx - cx) / (rw / 2)) ** 2 <= 1.0
            region &= cmap == 0
            free = int(region.sum())
            if free == 0:
                continue
            if placed + free > target * 1.15:
                # trim the region row-wise so the class does not overshoot
                keep = np.cumsum(region.ravel()) <= max(1, int(target - placed))
                region = region & keep.reshape(h, w)
                free = int(region.sum())
            cmap[region] = idx
            placed += free
    return cmap


def texture_field(shape, sigma_log: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-median lognormal texture, spatially correlated by a 5x5 box filter."""
    if sigma_log == 0:
        return np.ones(shape)
    g = uniform_filter(rng.standard_normal(shape), size=5, mode="reflect")
    g /= g.std()
    return np.exp(sigma_log * g)


def generate_scene(spec: SceneSpec, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free mean C3 raster ``(9, H, W)`` and its integer class map."""
    spec.validate()
    rng = np.random.default_rng(spec.layout_seed) if rng is None else rng
    cmap = _class_map(spec, rng)
    means = np.stack([np.asarray(c.mean, dtype=np.float64) for c in spec.palette])  # (K, 9)
    scene = means[cmap].transpose(2, 0, 1)
    scene *= texture_field(cmap.shape, spec.texture_sigma, rng)
    return np.ascontiguousarray(scene), cmap


def simulate_speckle(mean: np.ndarray, looks: int, rng: np.random.Generator) -> np.ndarray:
    """Draw L-look complex Wishart samples whose expectation is ``mean``.

    ``mean`` is packed C3, a single pixel or a raster; each pixel gets
    ``Z = (1/L) sum_k s_k s_k^H`` with ``s_k ~ CN(0, mean)`` in the
    lexicographic scattering-vector basis.
    """
    if looks < 1:
        raise ValueError(f"looks must be >= 1, got {looks}")
    c = pol.c3_unpack(mean)
    lam, vec = np.linalg.eigh(c)
    tr = np.trace(c, axis1=-2, axis2=-1).real
    if np.any(lam[..., 0] < -1e-12 * np.maximum(tr, np.finfo(float).tiny)):
        raise ValueError("speckle mean is not positive semidefinite")
    a = vec * np.sqrt(np.clip(lam, 0.0, None))[..., None, :]
    shape = c.shape[:-2] + (looks, 3)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    s = np.einsum("...ij,...lj->...li", a, z)
    zmat = np.einsum("...li,...lj->...ij", s, np.conj(s)) / looks
    return pol.c3_pack(zmat, check=False)


# --------------------------------------------------------------------------
# patches

@dataclass
class PatchPair:
    hr_c3: np.ndarray         # (9, 40, 40)
    lr_c3: np.ndarray         # (9, 20, 20)
    hr_intensity: np.ndarray  # (1, 40, 40)
    mode: PolMode
    origin: tuple[int, int] = (0, 0)

    @property
    def upsampled(self) -> np.ndarray:
        from .model import upsample_baseline
        return upsample_baseline(self.lr_c3)

    @property
    def target_residual(self) -> np.ndarray:
        return self.hr_c3 - self.upsampled


def make_patch(hr: np.ndarray, mode: PolMode, origin=(0, 0)) -> PatchPair:
    hr = np.ascontiguousarray(hr, dtype=np.float64)
    return PatchPair(hr_c3=hr,
                     lr_c3=pol.multilook_downsample(hr, FACTOR),
                     hr_intensity=pol.intensity_extract(hr, mode)[None],
                     mode=PolMode(mode),
                     origin=tuple(int(o) for o in origin))


def sample_patches(scene: np.ndarray, mode: PolMode | str, count: int,
                   rng: np.random.Generator, size: int = PATCH_HR) -> list[PatchPair]:
    """Random HR windows of ``size`` x ``size`` with their degraded counterparts."""
    _, h, w = scene.shape
    if h < size or w < size:
        raise ValueError(f"scene {h}x{w} is smaller than a {size}x{size} patch")
    if size % FACTOR:
        raise ValueError(f"patch size must be divisible by {FACTOR}")
    ys = rng.integers(0, h - size + 1, size=count)
    xs = rng.integers(0, w - size + 1, size=count)
    return [make_patch(scene[:, y:y + size, x:x + size], PolMode(mode), (y, x))
            for y, x in zip(ys, xs)]


def split_counts(count: int) -> tuple[int, int]:
    n_val = count // 10
    return count - n_val, n_val


@dataclass
class ManifestEntry:
    path: str   # patch stem, relative to the manifest's directory
    split: str
    mode: PolMode
    seed: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    scene_hash: str
    root: Path = Path(".")

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def write(self, path) -> None:
        path = Path(path)
        lines = [f"# seed={self.seed}", f"# scene_hash={self.scene_hash}",
                 "# path\tsplit\tmode\tseed"]
        lines += [f"{e.path}\t{e.split}\t{e.mode.value}\t{e.seed}" for e in self.entries]
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        seed, digest, entries = 0, "", []
        for raw in path.read_text().splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key == "seed":
                    seed = int(val)
                elif key == "scene_hash":
                    digest = val
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ContainerError(f"{path}: malformed manifest line {raw!r}")
            entries.append(ManifestEntry(parts[0], parts[1], PolMode(parts[2]), int(parts[3])))
        return cls(entries, seed, digest, path.parent)

    def validate(self) -> None:
        names = {}
        for e in self.entries:
            if e.path in names and names[e.path] != e.split:
                raise ContainerError(f"patch {e.path} appears in both splits")
            names[e.path] = e.split
            for suffix in PATCH_SUFFIXES:
                if not (self.root / (e.path + suffix)).is_file():
                    raise ContainerError(f"missing patch file {e.path + suffix}")

    def load(self, entry: ManifestEntry) -> PatchPair:
        stem = self.root / entry.path
        hr, meta = read_raster(str(stem) + ".hr.pfc3")
        lr, _ = read_raster(str(stem) + ".lr.pfc3")
        it, _ = read_raster(str(stem) + ".int.pfc3")
        return PatchPair(hr, lr, it, entry.mode, tuple(meta.get("origin", (0, 0))))


PATCH_SUFFIXES = (".hr.pfc3", ".lr.pfc3", ".int.pfc3")


def make_dataset(scene: np.ndarray, mode: PolMode | str, count: int, rng: np.random.Generator,
                 out_dir, seed: int = 0, scene_hash: str = "") -> DatasetManifest:
    """Sample ``count`` patches, write them under ``out_dir/patches`` and a manifest."""
    out_dir = Path(out_dir)
    (out_dir / "patches").mkdir(parents=True, exist_ok=True)
    mode = PolMode(mode)
    n_train, _ = split_counts(count)
    entries = []
    for i, p in enumerate(sample_patches(scene, mode, count, rng)):
        stem = f"patches/p{i:05d}"
        meta = {"origin": list(p.origin), "mode": mode.value, "index": i}
        write_raster(out_dir / (stem + ".hr.pfc3"), p.hr_c3, meta, dtype=np.float64)
        write_raster(out_dir / (stem + ".lr.pfc3"), p.lr_c3, meta, dtype=np.float64)
        write_raster(out_dir / (stem + ".int.pfc3"), p.hr_intensity, meta, dtype=np.float64)
        entries.append(ManifestEntry(stem, "train" if i < n_train else "val", mode, seed))
    manifest = DatasetManifest(entries, seed, scene_hash, out_dir)
    manifest.write(out_dir / "manifest.txt")
    return manifest
