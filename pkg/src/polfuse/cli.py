"""Batch command line: gen | train | fuse | eval | analyze.

Every subcommand accepts ``--config`` (YAML with optional sections ``scene``,
``dataset``, ``model``, ``train``, ``fuse``), ``--seed`` and ``--out``. Inputs
default to the locations earlier stages write under the same ``--out``, so a
whole pipeline can share one output directory.

Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import datagen, metrics, plotting
from . import polarimetry as pol
from .container import ContainerError, read_raster, write_raster
from .engine import AdamState
from .model import PSFNConfig, build_model, fuse_raster, load_checkpoint, save_checkpoint
from .training import LossLog, NumericalError, TrainSettings, read_loss_log, stack_patches, train

log = logging.getLogger("polfuse")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
SECTIONS = ("scene", "dataset", "model", "train", "fuse")


class ConfigError(ValueError):
    pass


class InputError(OSError):
    pass


# --------------------------------------------------------------------------
# configuration

def load_config(path) -> dict:
    if path is None:
        return {s: {} for s in SECTIONS}
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    cfg = {s: dict(raw.get(s) or {}) for s in SECTIONS}
    return cfg


def _pick(section: dict, cls, what: str, skip=()) -> dict:
    names = {f.name for f in fields(cls)} - set(skip)
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"{what}: unknown keys {sorted(unknown)}")
    return dict(section)


def scene_spec(cfg: dict, seed: int) -> datagen.SceneSpec:
    opts = _pick(cfg["scene"], datagen.SceneSpec, "scene", skip=("palette", "layout_seed"))
    try:
        spec = datagen.SceneSpec(layout_seed=seed, **opts)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scene: {exc}") from exc
    return spec


def model_config(cfg: dict) -> tuple[PSFNConfig, np.dtype]:
    opts = dict(cfg["model"])
    dtype = np.dtype(opts.pop("dtype", "float32"))
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"model.dtype must be float32 or float64, got {dtype}")
    try:
        mc = PSFNConfig(**_pick(opts, PSFNConfig, "model"))
        mc.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc
    return mc, dtype


def _mode(value) -> pol.PolMode:
    try:
        return pol.PolMode(str(value).upper())
    except ValueError as exc:
        raise ConfigError(f"unknown polarisation mode {value!r}") from exc


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


def _require_seed(args) -> int:
    if args.seed is None:
        raise ConfigError(f"'{args.command}' requires --seed")
    if args.seed < 0:
        raise ConfigError("--seed must be nonnegative")
    return args.seed


def _read(path, what: str) -> tuple[np.ndarray, dict]:
    return read_raster(_require_file(path, what))


# --------------------------------------------------------------------------
# commands

def cmd_gen(args, cfg) -> None:
    seed = _require_seed(args)
    spec = scene_spec(cfg, seed)
    ds = dict(cfg["dataset"])
    count = int(ds.pop("count", 100))
    mode = ds.pop("mode", "VV")
    count = args.count if args.count is not None else count
    mode = _mode(args.mode or mode)
    if ds:
        raise ConfigError(f"dataset: unknown keys {sorted(ds)}")
    if count < 1:
        raise ConfigError("dataset.count must be >= 1")
    if spec.height < datagen.PATCH_HR or spec.width < datagen.PATCH_HR:
        raise ConfigError(f"scene must be at least {datagen.PATCH_HR}x{datagen.PATCH_HR}")

    ss_scene, ss_speckle, ss_patch = np.random.SeedSequence(seed).spawn(3)
    mean, classes = datagen.generate_scene(spec, np.random.default_rng(ss_scene))
    hr = datagen.simulate_speckle(mean, spec.looks, np.random.default_rng(ss_speckle))
    lr = pol.multilook_downsample(hr, datagen.FACTOR)
    intensity = pol.intensity_extract(hr, mode)[None]

    out = Path(args.out)
    scene_dir = out / "scene"
    scene_dir.mkdir(parents=True, exist_ok=True)
    meta = {"seed": seed, "scene_hash": spec.digest(), "looks": spec.looks}
    write_raster(scene_dir / "hr.pfc3", hr, meta, dtype=np.float64)
    write_raster(scene_dir / "lr.pfc3", lr, meta, dtype=np.float64)
    write_raster(scene_dir / "int.pfc3", intensity, dict(meta, mode=mode.value), dtype=np.float64)
    write_raster(scene_dir / "classes.pfc3", classes[None].astype(np.float32), meta, dtype=np.float32)
    write_raster(scene_dir / "mean.pfc3", mean, meta, dtype=np.float64)

    manifest = datagen.make_dataset(hr, mode, count, np.random.default_rng(ss_patch), out / "dataset",
                                    seed=seed, scene_hash=spec.digest())
    manifest.validate()
    n_train, n_val = len(manifest.split("train")), len(manifest.split("val"))
    print(f"scene {spec.height}x{spec.width} looks={spec.looks} mode={mode.value}")
    print(f"patches: {count} (train {n_train}, val {n_val}) -> {out / 'dataset' / 'manifest.txt'}")


def _train_settings(args, cfg, seed: int) -> tuple[TrainSettings, int]:
    opts = dict(cfg["train"])
    every = int(opts.pop("checkpoint_every", 500))
    defaults = {f.name for f in fields(TrainSettings)} - {"seed"}
    unknown = set(opts) - defaults
    if unknown:
        raise ConfigError(f"train: unknown keys {sorted(unknown)}")
    if "mode" in opts:
        opts["mode"] = _mode(opts["mode"])
    if args.steps is not None:
        opts["max_steps"] = args.steps
    if args.batch_size is not None:
        opts["batch_size"] = args.batch_size
    if args.lr is not None:
        opts["lr"] = args.lr
    try:
        st = TrainSettings(seed=seed, **opts)
    except TypeError as exc:
        raise ConfigError(f"train: {exc}") from exc
    if "lr_halve_every" not in opts:
        st.lr_halve_every = max(1, st.epochs // 2)
    if st.batch_size < 1 or st.epochs < 1 or st.lr <= 0:
        raise ConfigError("train: batch_size, epochs and lr must be positive")
    if st.max_steps is not None and st.max_steps < 1:
        raise ConfigError("train: steps must be >= 1")
    if every < 1:
        raise ConfigError("train.checkpoint_every must be >= 1")
    return st, every


def cmd_train(args, cfg) -> None:
    seed = _require_seed(args)
    st, every = _train_settings(args, cfg, seed)
    out = Path(args.out) / "train"
    manifest_path = _require_file(args.data or Path(args.out) / "dataset" / "manifest.txt", "dataset manifest")
    manifest = datagen.DatasetManifest.read(manifest_path)
    manifest.validate()
    entries = manifest.split("train")
    if not entries:
        raise InputError(f"{manifest_path}: no training patches")
    modes = {e.mode for e in entries}
    if "mode" not in cfg["train"]:
        if len(modes) != 1:
            raise ConfigError(f"dataset mixes modes {sorted(m.value for m in modes)}")
        st.mode = modes.pop()
    elif modes != {st.mode}:
        raise ConfigError(f"train.mode {st.mode.value} does not match dataset modes")
    data = stack_patches([manifest.load(e) for e in entries])

    if args.resume:
        model, adam, _ = load_checkpoint(_require_file(args.resume, "checkpoint"))
        adam = adam or AdamState(lr=st.lr)
    else:
        mc, dtype = model_config(cfg)
        model = build_model(mc, np.random.default_rng(np.random.SeedSequence([seed, 1])), dtype=dtype)
        adam = AdamState(lr=st.lr)
    out.mkdir(parents=True, exist_ok=True)
    # relative path, so reruns into different output directories stay byte-identical
    extra = {"seed": seed, "mode": st.mode.value,
             "manifest": os.path.relpath(manifest_path, out)}

    with LossLog(out / "log.csv", append=bool(args.resume)) as logger:
        def on_step(step, info, lr):
            logger(step, info, lr)
            if step % every == 0:
                save_checkpoint(out / f"ckpt_{step:07d}.pfc3", model, adam, extra)
            if step % max(1, every // 5) == 0:
                log.info("step %d  l_total %.6g  alpha %.3f", step, info.l_total, info.alpha)

        try:
            adam, history = train(model, data, st, adam, on_step)
        finally:
            save_checkpoint(out / "checkpoint.pfc3", model, adam, extra)
    lg = read_loss_log(out / "log.csv")
    if lg["step"].size:
        plotting.plot_loss_curve(lg, out / "loss.png")
    last = history[-1].l_total if history else float("nan")
    print(f"trained {len(history)} steps (global step {adam.step}); final l_total {last:.6g}")
    print(f"checkpoint -> {out / 'checkpoint.pfc3'}")


def cmd_fuse(args, cfg) -> None:
    base = Path(args.out)
    model, _, _ = load_checkpoint(_require_file(args.checkpoint or base / "train" / "checkpoint.pfc3", "checkpoint"))
    c_y, _ = _read(args.lr or base / "scene" / "lr.pfc3", "LR raster")
    i_x, _ = _read(args.intensity or base / "scene" / "int.pfc3", "HR intensity raster")
    if c_y.shape[0] != 9 or i_x.shape[0] != 1:
        raise ConfigError(f"expected 9-channel LR and 1-channel intensity, got {c_y.shape[0]} and {i_x.shape[0]}")
    if i_x.shape[1:] != (2 * c_y.shape[1], 2 * c_y.shape[2]):
        raise ConfigError(f"intensity {i_x.shape[1:]} is not twice the LR size {c_y.shape[1:]}")
    opts = dict(cfg["fuse"])
    tile, overlap = int(opts.pop("tile", 20)), int(opts.pop("overlap", 4))
    if opts:
        raise ConfigError(f"fuse: unknown keys {sorted(opts)}")
    try:
        fused = fuse_raster(model, c_y, i_x, tile=tile, overlap=overlap)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not np.isfinite(fused).all():
        raise NumericalError("fused raster contains non-finite values")
    out = base / "fuse"
    out.mkdir(parents=True, exist_ok=True)
    write_raster(out / "fused.pfc3", fused, {"source": "psfn"}, dtype=np.float64)
    plotting.write_ppm(out / "pauli.ppm", plotting.pauli_rgb(fused))
    print(f"fused {c_y.shape[1]}x{c_y.shape[2]} -> {fused.shape[1]}x{fused.shape[2]}: {out / 'fused.pfc3'}")


def cmd_eval(args, cfg) -> None:
    base = Path(args.out)
    fused, _ = _read(args.fused or base / "fuse" / "fused.pfc3", "fused raster")
    gt, _ = _read(args.gt or base / "scene" / "hr.pfc3", "ground-truth raster")
    c_y, _ = _read(args.lr or base / "scene" / "lr.pfc3", "LR raster")
    bic = metrics.bicubic_baseline(c_y)
    if fused.shape != gt.shape or bic.shape != gt.shape:
        raise ConfigError(f"dimension mismatch: fused {fused.shape}, bicubic {bic.shape}, gt {gt.shape}")
    out = base / "eval"
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    csv_path.unlink(missing_ok=True)
    reports = [metrics.evaluate_report(fused, gt, "psfn", csv_path),
               metrics.evaluate_report(bic, gt, "bicubic", csv_path)]
    plotting.plot_eval(reports, out / "psnr.png")
    for r in reports:
        print(f"{r.label:8s} PSNR mean {min(r.psnr_mean, metrics.PSNR_CAP):7.3f} dB  MAE mean {r.mae_mean:.5f}")
    print(f"report -> {csv_path}")


def _region_mean(r: np.ndarray, region: str | None) -> np.ndarray:
    if region is None:
        return r.reshape(9, -1).mean(axis=1)
    try:
        y, x, h, w = (int(v) for v in region.split(","))
    except ValueError as exc:
        raise ConfigError(f"--region must be y,x,h,w, got {region!r}") from exc
    win = r[:, y:y + h, x:x + w]
    if h <= 0 or w <= 0 or win.shape[1:] != (h, w):
        raise ConfigError(f"--region {region} lies outside the {r.shape[1]}x{r.shape[2]} raster")
    return win.reshape(9, -1).mean(axis=1)


def cmd_analyze(args, cfg) -> None:
    base = Path(args.out)
    src = args.input or base / "fuse" / "fused.pfc3"
    r, _ = _read(src, "input raster")
    if r.shape[0] != 9:
        raise ConfigError(f"analysis needs a 9-channel C3 raster, got {r.shape[0]} channels")
    out = base / "analyze"
    out.mkdir(parents=True, exist_ok=True)
    kind = args.which
    if kind == "enl":
        try:
            enl = metrics.enl_map(r, args.window)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        write_raster(out / "enl.pfc3", enl.values[None], {"window": args.window}, dtype=np.float64)
        panels = {"input": enl.values}
        if args.compare:
            other, _ = _read(args.compare, "comparison raster")
            if other.shape != r.shape:
                raise ConfigError(f"comparison raster {other.shape} does not match {r.shape}")
            ref = metrics.enl_map(other, args.window)
            write_raster(out / "enl_compare.pfc3", ref.values[None], {"window": args.window}, dtype=np.float64)
            panels["compare"] = ref.values
        plotting.plot_enl(panels, out / "enl.png")
        for k, v in panels.items():
            print(f"ENL {k}: mean {v.mean():.4f}  median {np.median(v):.4f}")
    elif kind == "pauli":
        plotting.write_ppm(out / "pauli.ppm", plotting.pauli_rgb(r))
        plotting.plot_pauli(r, out / "pauli.png")
        print(f"pauli composite -> {out / 'pauli.ppm'}")
    elif kind == "y4r":
        powers = metrics.yamaguchi_y4r(r)
        for name in ("ps", "pd", "pv", "pc"):
            write_raster(out / f"y4r_{name}.pfc3", getattr(powers, name)[None], {"component": name},
                         dtype=np.float64)
        plotting.plot_y4r(powers.stack(), out / "y4r.png")
        tot = pol.span(r).sum()
        shares = [getattr(powers, n).sum() / tot if tot > 0 else 0.0 for n in ("ps", "pd", "pv", "pc")]
        print("Y4R power shares ps/pd/pv/pc: " + " ".join(f"{s:.4f}" for s in shares))
    elif kind == "signature":
        mean = _region_mean(r, args.region)
        try:
            surf = pol.polarimetric_signature(mean, args.kind, args.step)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        csv_path = out / f"signature_{args.kind}.csv"
        with open(csv_path, "w", newline="") as fh:
            fh.write("psi_deg,tau_deg,power\n")
            for psi, tau, p in surf.rows():
                fh.write(f"{psi:.6f},{tau:.6f},{p:.12e}\n")
        plotting.plot_signature(surf, out / f"signature_{args.kind}.png")
        print(f"{args.kind}-pol signature {surf.power.shape[0]}x{surf.power.shape[1]} -> {csv_path}")
    else:  # argparse restricts choices; kept for direct callers
        raise ConfigError(f"unknown analysis kind {kind!r}")


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="random seed (required for gen and train)")
    common.add_argument("--out", default="runs", help="output directory (default: runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="polfuse", description="PolSAR / single-pol SAR fusion toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="synthesise a scene and a patch dataset")
    g.add_argument("--count", type=int, help="number of patches (default 100)")
    g.add_argument("--mode", help="guide channel HH, HV or VV (default VV)")

    t = sub.add_parser("train", parents=[common], help="train the fusion network")
    t.add_argument("--data", help="dataset manifest (default OUT/dataset/manifest.txt)")
    t.add_argument("--steps", type=int, help="stop after this many global steps")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--resume", help="checkpoint to continue from")

    f = sub.add_parser("fuse", parents=[common], help="fuse a full LR raster with its HR intensity")
    f.add_argument("--checkpoint")
    f.add_argument("--lr", help="LR C3 raster (default OUT/scene/lr.pfc3)")
    f.add_argument("--intensity", help="HR intensity raster (default OUT/scene/int.pfc3)")

    e = sub.add_parser("eval", parents=[common], help="PSNR/MAE report for fused and bicubic results")
    e.add_argument("--fused")
    e.add_argument("--gt")
    e.add_argument("--lr")

    a = sub.add_parser("analyze", parents=[common], help="ENL, Pauli, Y4R or signature analysis")
    a.add_argument("which", choices=["enl", "pauli", "y4r", "signature"])
    a.add_argument("--input", help="C3 raster (default OUT/fuse/fused.pfc3)")
    a.add_argument("--compare", help="second raster for ENL comparison")
    a.add_argument("--window", type=int, default=7)
    a.add_argument("--kind", choices=["co", "cross"], default="co")
    a.add_argument("--step", type=float, default=1.0)
    a.add_argument("--region", help="y,x,h,w window averaged for the signature")
    return p


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "fuse": cmd_fuse, "eval": cmd_eval, "analyze": cmd_analyze}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"polfuse {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"polfuse {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ContainerError) as exc:
        print(f"polfuse {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
