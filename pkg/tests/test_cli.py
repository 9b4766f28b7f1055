import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from specrec import cli
from specrec.io import read_spc, sha256_file, write_spc
from specrec.metrics import evaluate, pixel_mae_map

SMALL = ["--n", "4", "--size", "16", "--m", "2", "--n-css", "3"]
NET = ["--base-channels", "4", "--patch", "8", "--stride", "8"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", root / "corpus", *SMALL, "--seed", 7) == 0
    assert run("train", "--corpus", root / "corpus", "--out", root / "pre", "--steps", 2, *NET) == 0
    return root


# synthesis


def rerun_identical(out: Path, *argv) -> bool:
    """Run the same command twice into ``out`` and compare every byte."""
    assert run(*argv) == 0
    first = tree(out)
    shutil.rmtree(out)
    assert run(*argv) == 0
    return first == tree(out)


def test_synth_deterministic(tmp_path):
    assert rerun_identical(tmp_path / "c", "synth", "--out", tmp_path / "c", *SMALL, "--seed", 7)


def test_synth_channels_and_manifest(work):
    manifest = json.loads((work / "corpus" / "manifest.json").read_text())
    entry = manifest["triples"][0]
    assert read_spc(work / "corpus" / entry["input"]["path"]).shape[0] == 6
    run_manifest = json.loads((work / "corpus" / "run_manifest.json").read_text())
    assert run_manifest["command"] == "synth" and run_manifest["seed"] == 7
    for rel, digest in run_manifest["outputs"].items():
        assert sha256_file(work / "corpus" / rel) == digest
    assert "time" not in json.dumps(run_manifest)


def test_corrupt_corpus_exit_code(work, tmp_path):
    assert run("synth", "--out", tmp_path / "c", *SMALL, "--seed", 7) == 0
    target = tmp_path / "c" / "train" / "train000.input.spc"
    raw = bytearray(target.read_bytes())
    raw[-1] ^= 0xFF
    target.write_bytes(bytes(raw))
    assert run("train", "--corpus", tmp_path / "c", "--out", tmp_path / "t", "--steps", 1, *NET) == 2


# linear recovery and rendering


def test_recover_linear_true_css(work, tmp_path):
    out = tmp_path / "lin"
    assert run("recover-linear", "--corpus", work / "corpus", "--triple", "test000", "--use-true-css", "--out", out) == 0
    rec = read_spc(out / "recovered.spc")
    assert rec.shape[0] == 31
    manifest = json.loads((work / "corpus" / "manifest.json").read_text())
    entry = next(t for t in manifest["triples"] if t["id"] == "test000")
    truth = read_spc(work / "corpus" / entry["truth"]["path"])
    report = dict(line.split("=", 1) for line in (out / "report.txt").read_text().splitlines())
    direct = evaluate(rec, truth)
    for key in ("mae", "rmse", "sas", "psnr", "ssim"):
        assert float(report[key]) == getattr(direct, key)
    band = np.loadtxt(out / "band_mae.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(band[:, 1], direct.band_mae)
    assert band.shape == (31, 2)


def test_render_discrete_then_recover_reproduces_input(work, tmp_path):
    corpus = work / "corpus"
    manifest = json.loads((corpus / "manifest.json").read_text())
    entry = manifest["triples"][0]
    css = corpus / f"css/{entry['css']}.csv"
    illums = [corpus / f"illum/{x}.csv" for x in entry["illuminations"]]
    illum_flags = [a for p in illums for a in ("--illum", p)]
    cube = corpus / entry["truth"]["path"]
    assert run("render", "--cube", cube, "--css", css, *illum_flags, "--mode", "discrete", "--out", tmp_path / "r") == 0
    stack = tmp_path / "r" / "stack.spc"
    assert read_spc(stack).shape[0] == 6
    out = tmp_path / "lin"
    # exact pseudo-inverse; the amber light leaves H H^T too ill-conditioned for the default ridge to vanish at 1e-9
    assert run("recover-linear", "--input", stack, *illum_flags, "--css", css, "--truth", cube, "--ridge", 0, "--out", out) == 0
    report = dict(line.split("=", 1) for line in (out / "report.txt").read_text().splitlines())
    assert float(report["observation_residual"]) <= 1e-9
    assert (out / "band_mae.csv").exists()


def test_render_fine_matches_corpus_input(work, tmp_path):
    corpus = work / "corpus"
    entry = json.loads((corpus / "manifest.json").read_text())["triples"][0]
    illum_flags = [a for x in entry["illuminations"] for a in ("--illum", corpus / f"illum/{x}.csv")]
    args = ["--cube", corpus / entry["truth"]["path"], "--css", corpus / f"css/{entry['css']}.csv", *illum_flags]
    assert run("render", *args, "--out", tmp_path / "f") == 0
    assert read_spc(tmp_path / "f" / "stack.spc").tobytes() == read_spc(corpus / entry["input"]["path"]).tobytes()
    assert run("render", *args, "--mode", "other", "--out", tmp_path / "g") == 1


def test_recover_linear_usage_errors(work, tmp_path):
    assert run("recover-linear", "--corpus", work / "corpus", "--triple", "test000", "--out", tmp_path) == 1
    assert run("recover-linear", "--corpus", work / "corpus", "--out", tmp_path) == 1
    assert run("recover-linear", "--corpus", work / "corpus", "--triple", "nope", "--use-true-css", "--out", tmp_path) == 1


# training phases


def test_train_outputs_and_determinism(work, tmp_path):
    assert (work / "pre" / "model.tnw").exists()
    log = (work / "pre" / "train_log.csv").read_text().splitlines()
    assert log[0] == "step,phase,kind,value" and len(log) == 1 + 2 * 3
    out = tmp_path / "pre2"
    assert rerun_identical(out, "train", "--corpus", work / "corpus", "--out", out, "--steps", 2, *NET)
    assert (out / "model.tnw").read_bytes() == (work / "pre" / "model.tnw").read_bytes()


def test_meta_adapt_eval_pipeline(work, tmp_path):
    meta = tmp_path / "meta"
    args = ["--corpus", work / "corpus", "--init", work / "pre" / "model.tnw", "--out", meta]
    assert run("meta-train", *args, "--meta-steps", 1, "--meta-batch", 2, "--n-inner", 1, "--patch", 8, "--stride", 8) == 0
    assert (meta / "meta_log.csv").read_text().startswith("step,phase,kind,value\n0,meta,")
    ckpt = meta / "model.tnw"
    assert run("eval", "--corpus", work / "corpus", "--ckpt", ckpt, "--out", tmp_path / "ev") == 0
    assert run("adapt", "--corpus", work / "corpus", "--ckpt", ckpt, "--n", 0, "--out", tmp_path / "a0") == 0
    assert (tmp_path / "ev" / "metrics.csv").read_bytes() == (tmp_path / "a0" / "metrics.csv").read_bytes()
    table = (tmp_path / "ev" / "metrics.csv").read_text().splitlines()
    assert table[0] == "id,mae,rmse,sas,psnr,ssim" and table[-1].startswith("mean,")
    assert run("adapt", "--corpus", work / "corpus", "--ckpt", ckpt, "--n", 2, "--sweep", "0,2", "--out", tmp_path / "a2") == 0
    sweep = (tmp_path / "a2" / "sweep.csv").read_text().splitlines()
    assert sweep[0] == "n,mae,rmse,sas,psnr,ssim,aux" and [r.split(",")[0] for r in sweep[1:]] == ["0", "2"]
    mean_eval = table[-1].split(",")[1:]
    assert sweep[1].split(",")[1:6] == mean_eval
    mean_n2 = (tmp_path / "a2" / "metrics.csv").read_text().splitlines()[-1].split(",")[1:]
    assert sweep[2].split(",")[1:6] == mean_n2
    manifest = json.loads((tmp_path / "a2" / "run_manifest.json").read_text())
    assert "sweep.csv" in manifest["outputs"]
    aux = np.loadtxt(tmp_path / "a2" / "aux_loss.csv", delimiter=",", skiprows=1, usecols=(1, 2), ndmin=2)
    assert aux.shape[1] == 2


def test_checkpoint_mismatch_exit_code(work, tmp_path):
    assert run("synth", "--out", tmp_path / "m1", "--n", 4, "--size", 16, "--m", 1, "--n-css", 3) == 0
    assert run("eval", "--corpus", tmp_path / "m1", "--ckpt", work / "pre" / "model.tnw", "--out", tmp_path / "e") == 3
    bad = tmp_path / "bad.tnw"
    bad.write_bytes(b"TNW1" + bytes(3))
    assert run("eval", "--corpus", work / "corpus", "--ckpt", bad, "--out", tmp_path / "e2") == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(work, tmp_path):
    code = run("train", "--corpus", work / "corpus", "--out", tmp_path / "d", "--steps", 20, "--lr", 1e300, "--cosine", "false", *NET)
    assert code == 3


def test_adapt_usage_errors(work, tmp_path):
    base = ["adapt", "--corpus", work / "corpus", "--ckpt", work / "pre" / "model.tnw", "--out", tmp_path]
    assert run(*base, "--n", -1) == 1
    assert run(*base, "--sweep", "1,x") == 1


# export


def test_export_pgm_and_correlations(tmp_path, rng):
    truth = rng.uniform(0, 1, (31, 5, 4))
    rec = truth + rng.normal(0, 0.05, truth.shape)
    write_spc(tmp_path / "t.spc", truth)
    write_spc(tmp_path / "r.spc", rec)
    out = tmp_path / "x"
    assert run("export", "--recovered", tmp_path / "r.spc", "--truth", tmp_path / "t.spc", "--pixel", "1,2", "--pixel", "4,3", "--out", out) == 0
    expected = pixel_mae_map(read_spc(tmp_path / "r.spc"), read_spc(tmp_path / "t.spc"))
    assert abs(cli.read_pgm_max(out / "error_map.pgm") - expected.max()) <= 1e-6
    lines = (out / "error_map.pgm").read_text().splitlines()
    assert lines[0] == "P2" and lines[2] == "4 5" and lines[3] == "255"
    values = np.array([[int(v) for v in row.split()] for row in lines[4:]])
    assert values.max() == 255 and values.shape == (5, 4)
    curve = (out / "curve_1_2.csv").read_text().splitlines()
    assert curve[0] == "wavelength_nm,truth,recovered" and len(curve) == 33 and curve[-1].startswith("# corr=")
    assert (out / "correlations.csv").read_text().splitlines()[0] == "row,col,corr"


def test_export_trivial_correlations(tmp_path):
    a = np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1)
    write_spc(tmp_path / "a.spc", a)
    write_spc(tmp_path / "b.spc", a[::-1].copy())
    write_spc(tmp_path / "c.spc", np.full((3, 1, 1), 0.5))
    assert run("export", "--recovered", tmp_path / "a.spc", "--truth", tmp_path / "a.spc", "--pixel", "0,0", "--out", tmp_path / "same") == 0
    assert float((tmp_path / "same" / "correlations.csv").read_text().splitlines()[1].split(",")[2]) == 1.0
    pgm = (tmp_path / "same" / "error_map.pgm").read_text().splitlines()
    assert pgm[-1] == "0" and cli.read_pgm_max(tmp_path / "same" / "error_map.pgm") == 0.0
    assert run("export", "--recovered", tmp_path / "b.spc", "--truth", tmp_path / "a.spc", "--pixel", "0,0", "--out", tmp_path / "anti") == 0
    assert float((tmp_path / "anti" / "correlations.csv").read_text().splitlines()[1].split(",")[2]) == -1.0
    assert run("export", "--recovered", tmp_path / "c.spc", "--truth", tmp_path / "c.spc", "--pixel", "0,0", "--out", tmp_path / "flat") == 0
    curve = (tmp_path / "flat" / "curve_0_0.csv").read_text()
    assert "corr=nan (undefined: constant spectrum)" in curve


def test_export_errors(tmp_path):
    write_spc(tmp_path / "a.spc", np.zeros((3, 2, 2)))
    write_spc(tmp_path / "b.spc", np.zeros((3, 2, 3)))
    assert run("export", "--recovered", tmp_path / "a.spc", "--truth", tmp_path / "a.spc", "--pixel", "2,0", "--out", tmp_path / "o") == 1
    assert run("export", "--recovered", tmp_path / "a.spc", "--truth", tmp_path / "b.spc", "--out", tmp_path / "o") == 3
    assert run("export", "--recovered", tmp_path / "a.spc", "--truth", tmp_path / "a.spc", "--pixel", "x", "--out", tmp_path / "o") == 1


# option resolution and exit codes


def test_option_precedence(tmp_path):
    cfg = tmp_path / "opts.cfg"
    cfg.write_text("# comment\nseed = 3\nsteps=9\nlr=0.5\n")
    base = {"corpus": "c", "out": "o"}
    assert cli.resolve("train", base, env={})["steps"] == 200
    from_file = cli.resolve("train", {**base, "config": cfg}, env={})
    assert (from_file["seed"], from_file["steps"], from_file["lr"]) == (3, 9, 0.5)
    assert cli.resolve("train", {**base, "config": cfg}, env={"SPECREC_SEED": "11"})["seed"] == 11
    flags = cli.resolve("train", {**base, "config": cfg, "seed": 5, "steps": 1}, env={"SPECREC_SEED": "11"})
    assert (flags["seed"], flags["steps"], flags["lr"]) == (5, 1, 0.5)


def test_config_file_errors(tmp_path):
    cfg = tmp_path / "opts.cfg"
    cfg.write_text("bogus=1\n")
    with pytest.raises(cli.UsageError):
        cli.resolve("train", {"config": cfg, "corpus": "c", "out": "o"}, env={})
    cfg.write_text("no equals sign\n")
    with pytest.raises(cli.UsageError):
        cli.resolve("train", {"config": cfg, "corpus": "c", "out": "o"}, env={})
    with pytest.raises(cli.UsageError):
        cli.resolve("train", {"corpus": "c", "out": "o"}, env={"SPECREC_SEED": "x"})
    with pytest.raises(cli.UsageError, match="--corpus"):
        cli.resolve("train", {"out": "o"}, env={})


def test_config_file_drives_a_run(tmp_path):
    cfg = tmp_path / "synth.cfg"
    cfg.write_text(f"out={tmp_path / 'cfgcorpus'}\nn=4\nsize=16\nm=1\nn_css=3\n")
    assert run("synth", "--config", cfg, "--seed", 2) == 0
    manifest = json.loads((tmp_path / "cfgcorpus" / "run_manifest.json").read_text())
    assert manifest["config"]["m"] == 1 and manifest["seed"] == 2


def test_usage_and_io_exit_codes(tmp_path):
    assert run("bogus") == 1
    assert run("train", "--out", tmp_path) == 1
    assert run("train", "--corpus", tmp_path / "missing", "--out", tmp_path / "o") == 2
    assert run("synth", "--out", tmp_path / "s", "--n", "many") == 1


def test_entry_point_subprocess(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "specrec.cli", "synth", "--out", str(tmp_path / "c"), "--n", "4", "--size", "16", "--m", "1", "--n-css", "3"],
        capture_output=True,
        text=True,
        env={"SPECREC_SEED": "4", "PATH": "/usr/bin:/bin"},
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "c" / "manifest.json").read_text())["seed"] == 4


def test_check_command(capsys):
    assert run("check") == 0
    out = capsys.readouterr().out.splitlines()
    assert all(line.startswith("PASS") for line in out[:-1])
    assert out[-1].endswith("checks passed")
