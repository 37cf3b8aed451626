import csv

import numpy as np
import pytest

from polfuse import cli
from polfuse import polarimetry as pol
from polfuse.container import read_raster
from polfuse.model import build_model, clamp_diagonal, load_checkpoint, save_checkpoint, upsample_baseline, PSFNConfig
from polfuse.plotting import pauli_rgb, read_ppm
from polfuse.training import read_loss_log

CONFIG = """\
scene: {height: 80, width: 80}
dataset: {count: 12}
model: {width: 4, residual_units: 1, complex_width: 2}
train: {batch_size: 4, checkpoint_every: 2}
"""


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """One small pipeline shared by the read-only tests below."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.yaml"
    cfg.write_text(CONFIG)
    out = root / "out"
    common = ("--config", cfg, "--out", out)
    assert _run("gen", *common, "--seed", 3) == 0
    assert _run("train", *common, "--seed", 3, "--steps", 4) == 0
    assert _run("fuse", *common) == 0
    assert _run("eval", *common) == 0
    return root, cfg, out


# --------------------------------------------------------------------------
# configuration and exit codes

def test_seed_required(tmp_path):
    assert _run("gen", "--out", tmp_path) == cli.EXIT_CONFIG
    assert _run("train", "--out", tmp_path) == cli.EXIT_CONFIG


def test_unknown_config_section(tmp_path):
    (tmp_path / "c.yaml").write_text("bogus: {a: 1}\n")
    assert _run("gen", "--config", tmp_path / "c.yaml", "--seed", 1, "--out", tmp_path) == cli.EXIT_CONFIG


def test_unknown_config_key(tmp_path):
    (tmp_path / "c.yaml").write_text("scene: {heigth: 80}\n")
    assert _run("gen", "--config", tmp_path / "c.yaml", "--seed", 1, "--out", tmp_path) == cli.EXIT_CONFIG


def test_invalid_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text("scene: [unclosed\n")
    assert _run("gen", "--config", tmp_path / "c.yaml", "--seed", 1, "--out", tmp_path) == cli.EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert _run("gen", "--config", tmp_path / "nope.yaml", "--seed", 1, "--out", tmp_path) == cli.EXIT_IO


def test_invalid_scene_values(tmp_path):
    (tmp_path / "c.yaml").write_text("scene: {height: 81, width: 80}\n")
    assert _run("gen", "--config", tmp_path / "c.yaml", "--seed", 1, "--out", tmp_path) == cli.EXIT_CONFIG


def test_missing_inputs_are_io_errors(tmp_path):
    assert _run("train", "--seed", 1, "--out", tmp_path) == cli.EXIT_IO
    assert _run("fuse", "--out", tmp_path) == cli.EXIT_IO
    assert _run("eval", "--out", tmp_path) == cli.EXIT_IO
    assert _run("analyze", "enl", "--out", tmp_path) == cli.EXIT_IO


def test_unknown_analysis_kind(tmp_path):
    with pytest.raises(SystemExit) as exc:
        _run("analyze", "entropy", "--out", tmp_path)
    assert exc.value.code != 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # the overflow is the point
def test_numerical_failure_exit_code(run, tmp_path):
    _, cfg, out = run
    code = _run("train", "--config", cfg, "--out", tmp_path, "--seed", 3, "--steps", 20,
                "--lr", 1e30, "--data", out / "dataset" / "manifest.txt")
    assert code == cli.EXIT_NUMERIC


# --------------------------------------------------------------------------
# gen

def test_gen_default_count_split(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("scene: {height: 40, width: 40}\n")
    assert _run("gen", "--config", tmp_path / "c.yaml", "--seed", 1, "--out", tmp_path) == 0
    assert "train 90, val 10" in capsys.readouterr().out
    lines = [ln for ln in (tmp_path / "dataset" / "manifest.txt").read_text().splitlines()
             if not ln.startswith("#")]
    splits = [ln.split("\t")[1] for ln in lines]
    assert splits.count("train") == 90 and splits.count("val") == 10


def test_gen_rerun_is_bit_identical(run, tmp_path):
    _, cfg, out = run
    assert _run("gen", "--config", cfg, "--out", tmp_path, "--seed", 3) == 0
    first = sorted(p.relative_to(out) for p in (out / "dataset").rglob("*") if p.is_file())
    first += sorted(p.relative_to(out) for p in (out / "scene").rglob("*") if p.is_file())
    for rel in first:
        assert (tmp_path / rel).read_bytes() == (out / rel).read_bytes(), rel


def test_gen_different_seed_differs(run, tmp_path):
    _, cfg, out = run
    assert _run("gen", "--config", cfg, "--out", tmp_path, "--seed", 4) == 0
    assert (tmp_path / "scene" / "hr.pfc3").read_bytes() != (out / "scene" / "hr.pfc3").read_bytes()


def test_gen_scene_files(run):
    _, _, out = run
    hr, meta = read_raster(out / "scene" / "hr.pfc3")
    lr, _ = read_raster(out / "scene" / "lr.pfc3")
    it, imeta = read_raster(out / "scene" / "int.pfc3")
    assert hr.shape == (9, 80, 80) and lr.shape == (9, 40, 40) and it.shape == (1, 80, 80)
    np.testing.assert_array_equal(lr, pol.multilook_downsample(hr, 2))
    np.testing.assert_array_equal(it[0], hr[pol.R33])
    assert meta["seed"] == 3 and imeta["mode"] == "VV"


# --------------------------------------------------------------------------
# train

def test_train_log_and_checkpoints(run):
    _, _, out = run
    lg = read_loss_log(out / "train" / "log.csv")
    np.testing.assert_array_equal(lg["step"], [1, 2, 3, 4])
    assert np.all(lg["alpha"] + lg["beta"] == 1.0)
    assert np.all(lg["l_total"] > 0)
    assert (out / "train" / "ckpt_0000002.pfc3").is_file()
    assert (out / "train" / "ckpt_0000004.pfc3").is_file()
    assert (out / "train" / "loss.png").stat().st_size > 0
    _, adam, extra = load_checkpoint(out / "train" / "checkpoint.pfc3")
    assert adam.step == 4


def test_train_resume_continues_step_counter(run, tmp_path):
    _, cfg, out = run
    data = out / "dataset" / "manifest.txt"
    common = ("--config", cfg, "--out", tmp_path, "--seed", 3, "--data", data)
    assert _run("train", *common, "--steps", 2) == 0
    assert _run("train", *common, "--steps", 4, "--resume", tmp_path / "train" / "checkpoint.pfc3") == 0
    lg = read_loss_log(tmp_path / "train" / "log.csv")
    np.testing.assert_array_equal(lg["step"], [1, 2, 3, 4])
    # an interrupted run replays the uninterrupted one exactly
    ref = read_loss_log(out / "train" / "log.csv")
    np.testing.assert_array_equal(lg["l_total"], ref["l_total"])


# --------------------------------------------------------------------------
# fuse and eval

def test_fuse_output(run):
    _, _, out = run
    fused, _ = read_raster(out / "fuse" / "fused.pfc3")
    lr, _ = read_raster(out / "scene" / "lr.pfc3")
    assert fused.shape == (9, 2 * lr.shape[1], 2 * lr.shape[2])
    assert np.all(fused[list(pol.DIAGONAL)] >= 0)
    np.testing.assert_array_equal(read_ppm(out / "fuse" / "pauli.ppm"), pauli_rgb(fused))


def test_fuse_zero_model_is_bilinear(run, tmp_path):
    _, cfg, out = run
    m = build_model(PSFNConfig(width=4, residual_units=1, complex_width=2), np.random.default_rng(0))
    for p in m.params.values():
        p.data[...] = 0
    save_checkpoint(tmp_path / "zero.pfc3", m)
    assert _run("fuse", "--config", cfg, "--out", out, "--checkpoint", tmp_path / "zero.pfc3",
                "--lr", out / "scene" / "lr.pfc3", "--intensity", out / "scene" / "int.pfc3") == 0
    fused, _ = read_raster(out / "fuse" / "fused.pfc3")
    lr, _ = read_raster(out / "scene" / "lr.pfc3")
    np.testing.assert_array_equal(fused, clamp_diagonal(upsample_baseline(lr)))
    # restore the trained output for the other tests
    assert _run("fuse", "--config", cfg, "--out", out) == 0


def test_fuse_is_deterministic(run, tmp_path):
    _, cfg, out = run
    before = (out / "fuse" / "fused.pfc3").read_bytes()
    assert _run("fuse", "--config", cfg, "--out", out) == 0
    assert (out / "fuse" / "fused.pfc3").read_bytes() == before


def test_fuse_dimension_mismatch(run, tmp_path):
    _, cfg, out = run
    code = _run("fuse", "--config", cfg, "--out", tmp_path, "--checkpoint", out / "train" / "checkpoint.pfc3",
                "--lr", out / "dataset" / "patches" / "p00000.lr.pfc3", "--intensity", out / "scene" / "int.pfc3")
    assert code == cli.EXIT_CONFIG


def test_eval_report(run):
    _, _, out = run
    rows = list(csv.reader(open(out / "eval" / "report.csv")))
    assert rows[0] == ["label", "psnr_p1", "psnr_p2", "psnr_p3", "psnr_mean",
                       "mae_p1", "mae_p2", "mae_p3", "mae_mean"]
    assert [r[0] for r in rows[1:]] == ["psfn", "bicubic"]
    for r in rows[1:]:
        vals = [float(v) for v in r[1:]]
        assert vals[3] == pytest.approx(np.mean(vals[:3]), abs=1e-5)
        assert vals[7] == pytest.approx(np.mean(vals[4:7]), abs=1e-5)
    assert (out / "eval" / "psnr.png").stat().st_size > 0


def test_eval_identical_inputs_capped(run, tmp_path):
    _, cfg, out = run
    hr = out / "scene" / "hr.pfc3"
    assert _run("eval", "--config", cfg, "--out", tmp_path, "--fused", hr, "--gt", hr,
                "--lr", out / "scene" / "lr.pfc3") == 0
    rows = list(csv.reader(open(tmp_path / "eval" / "report.csv")))
    assert rows[1][1:5] == ["99.000000"] * 4
    assert float(rows[1][8]) == 0.0


# --------------------------------------------------------------------------
# analyze

@pytest.mark.parametrize("step, rows", [(1.0, 181 * 91), (2.0, 91 * 46), (5.0, 37 * 19)])
def test_signature_csv_rows(run, tmp_path, step, rows):
    _, _, out = run
    assert _run("analyze", "signature", "--out", tmp_path, "--input", out / "fuse" / "fused.pfc3",
                "--step", step) == 0
    lines = (tmp_path / "analyze" / "signature_co.csv").read_text().splitlines()
    assert lines[0] == "psi_deg,tau_deg,power"
    assert len(lines) - 1 == rows
    power = np.array([float(ln.split(",")[2]) for ln in lines[1:]])
    assert power.max() == 1.0 and power.min() >= 0.0


def test_signature_cross_and_region(run, tmp_path):
    _, _, out = run
    assert _run("analyze", "signature", "--out", tmp_path, "--input", out / "scene" / "hr.pfc3",
                "--kind", "cross", "--region", "0,0,10,10") == 0
    assert (tmp_path / "analyze" / "signature_cross.csv").is_file()
    assert (tmp_path / "analyze" / "signature_cross.png").stat().st_size > 0
    assert _run("analyze", "signature", "--out", tmp_path, "--input", out / "scene" / "hr.pfc3",
                "--region", "75,75,10,10") == cli.EXIT_CONFIG


def test_pauli_composite_channel_order(tmp_path):
    # left half pure dihedral (p2), right half pure trihedral (p1)
    r = np.zeros((9, 4, 8))
    r[[pol.R11, pol.R33], :, :] = 1.0
    r[pol.R13, :, :4] = -1.0
    r[pol.R13, :, 4:] = 1.0
    r[pol.R22, 0, 0] = 0.5
    from polfuse.container import write_raster
    write_raster(tmp_path / "in.pfc3", r)
    assert _run("analyze", "pauli", "--out", tmp_path, "--input", tmp_path / "in.pfc3") == 0
    rgb = read_ppm(tmp_path / "analyze" / "pauli.ppm")
    assert rgb.shape == (4, 8, 3)
    assert tuple(rgb[1, 1]) == (255, 0, 0)
    assert tuple(rgb[1, 6]) == (0, 0, 255)
    assert rgb[0, 0, 1] == 255
    assert (tmp_path / "analyze" / "pauli.png").stat().st_size > 0


def test_analyze_y4r(run, tmp_path):
    _, _, out = run
    src = out / "scene" / "hr.pfc3"
    assert _run("analyze", "y4r", "--out", tmp_path, "--input", src) == 0
    hr, _ = read_raster(src)
    parts = [read_raster(tmp_path / "analyze" / f"y4r_{n}.pfc3")[0][0] for n in ("ps", "pd", "pv", "pc")]
    total = np.sum(parts, axis=0)
    span = pol.span(hr)
    assert np.all(np.abs(total - span) <= 1e-9 * span)
    assert (tmp_path / "analyze" / "y4r.png").stat().st_size > 0


def test_analyze_enl_compare(run, tmp_path):
    _, _, out = run
    assert _run("analyze", "enl", "--out", tmp_path, "--input", out / "fuse" / "fused.pfc3",
                "--compare", out / "scene" / "hr.pfc3") == 0
    a, meta = read_raster(tmp_path / "analyze" / "enl.pfc3")
    b, _ = read_raster(tmp_path / "analyze" / "enl_compare.pfc3")
    assert a.shape == b.shape == (1, 80, 80) and meta == {"window": 7}
    assert np.all(a > 0) and np.all(b > 0)
    assert _run("analyze", "enl", "--out", tmp_path, "--input", out / "fuse" / "fused.pfc3",
                "--window", 4) == cli.EXIT_CONFIG


def test_analyze_rejects_non_c3(run, tmp_path):
    _, _, out = run
    assert _run("analyze", "y4r", "--out", tmp_path, "--input", out / "scene" / "int.pfc3") == cli.EXIT_CONFIG
