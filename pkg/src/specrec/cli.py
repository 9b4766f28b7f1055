"""Command-line entry point: ``specrec <command> [options]``.

Option values resolve as built-in defaults < ``--config`` file (flat
``key=value`` lines) < ``SPECREC_SEED`` (seed only) < explicit flags. Every
command that writes files also writes ``run_manifest.json`` into its output
directory with the resolved options and content hashes of inputs and outputs.

Exit codes: 0 success, 1 usage (or a failed ``check``), 2 IO or corrupt
input, 3 configuration mismatch.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus as corpus_io
from .io import read_css_csv, read_curve_csv, read_spc, sha256_file, write_spc
from .maxl import DivergenceError, Objective, PatchData, TrainConfig, adapt_test_time, meta_train, pretrain
from .metrics import MetricsReport, evaluate, pearson, pixel_mae_map
from .spectral import (
    DEFAULT_RIDGE,
    SamplingGrid,
    SpectralCube,
    projection_operator,
    system_matrix,
)
from .synth import discrete_stack, make_corpus, synth_triple
from .tinynet import checkpoint
from .tinynet.net import ABLATIONS, NetConfig, init_params

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ConfigMismatch(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _pixel(text) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"pixel must be ROW,COL, got {text!r}") from None
    return r, c


@dataclass(frozen=True)
class Opt:
    name: str
    type: object = str
    default: object = None
    help: str = ""
    required: bool = False
    multiple: bool = False


CORPUS = Opt("corpus", help="corpus directory", required=True)
OUT = Opt("out", help="output directory", required=True)
SEED = Opt("seed", int, 0, "random seed")
NET_OPTS = [
    Opt("ablation", str, "full", f"network variant: {', '.join(ABLATIONS)}"),
    Opt("base_channels", int, 8, "feature width at full resolution"),
    Opt("scales", int, 2, "number of pyramid scales"),
    Opt("relative_ridge", float, 1e-3, "ridge on H H^T relative to its mean eigenvalue"),
]
PATCH_OPTS = [Opt("patch", int, 16, "training patch size"), Opt("stride", int, 8, "patch stride")]

COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "synth": (
        "build a synthetic corpus",
        [
            OUT,
            Opt("n", int, 16, "number of reflectance images"),
            Opt("size", int, 32, "image height and width"),
            Opt("m", int, 2, "number of illuminations (1-3)"),
            Opt("n_css", int, 6, "size of the camera library"),
            SEED,
        ],
    ),
    "render": (
        "render a reflectance cube to an RGB stack",
        [
            Opt("cube", help="SPC1 reflectance cube", required=True),
            Opt("css", help="camera CSV", required=True),
            Opt("illum", help="illumination CSV (repeat for M > 1)", required=True, multiple=True),
            Opt("mode", str, "fine", "fine (1 nm integration) or discrete (band-grid matrix product)"),
            OUT,
        ],
    ),
    "recover-linear": (
        "closed-form subspace recovery",
        [
            Opt("corpus", help="corpus directory (with --triple)"),
            Opt("triple", help="triple id inside the corpus"),
            Opt("input", help="SPC1 RGB stack (without --corpus)"),
            Opt("illum", help="illumination CSV (without --corpus)", multiple=True),
            Opt("truth", help="SPC1 reference cube for metrics (optional)"),
            Opt("css", help="camera CSV"),
            Opt("use_true_css", _bool, False, "use the triple's own camera"),
            Opt("omega", float, 1.0, "rescale factor"),
            Opt("ridge", float, DEFAULT_RIDGE, "ridge added to H H^T"),
            OUT,
        ],
    ),
    "train": (
        "pre-train a network",
        [
            CORPUS,
            OUT,
            SEED,
            Opt("steps", int, 200, "pre-training steps"),
            Opt("lr", float, 2e-3, "base learning rate"),
            Opt("batch", int, 8, "batch size"),
            Opt("cosine", _bool, True, "cosine-anneal the learning rate"),
            *NET_OPTS,
            *PATCH_OPTS,
        ],
    ),
    "meta-train": (
        "meta-auxiliary training from a checkpoint",
        [
            CORPUS,
            Opt("init", help="starting checkpoint", required=True),
            OUT,
            SEED,
            Opt("meta_steps", int, 50, "outer steps"),
            Opt("meta_batch", int, 4, "tasks per outer step"),
            Opt("alpha", float, 1e-2, "inner step size"),
            Opt("beta", float, 5e-5, "outer step size"),
            Opt("n_inner", int, 5, "inner steps"),
            *PATCH_OPTS,
        ],
    ),
    "adapt": (
        "test-time adaptation and evaluation on the test split",
        [
            CORPUS,
            Opt("ckpt", help="checkpoint", required=True),
            Opt("n", int, 5, "adaptation steps"),
            Opt("alpha", float, 1e-2, "adaptation step size"),
            Opt("sweep", str, "", "comma-separated step counts for an extra mean-metrics table, e.g. 0,1,3,5"),
            OUT,
        ],
    ),
    "eval": (
        "evaluate a checkpoint on the test split without adaptation",
        [CORPUS, Opt("ckpt", help="checkpoint", required=True), OUT],
    ),
    "export": (
        "error map and reflectance curves for a cube pair",
        [
            Opt("recovered", help="SPC1 recovered cube", required=True),
            Opt("truth", help="SPC1 reference cube", required=True),
            Opt("pixel", _pixel, None, "ROW,COL to export (repeatable)", multiple=True),
            OUT,
        ],
    ),
    "check": ("run the numerical self-test battery", []),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="specrec", description="Spectral reflectance recovery toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key=value option file", default=argparse.SUPPRESS)
        for o in opts:
            flag = "--" + o.name.replace("_", "-")
            kw = {"dest": o.name, "default": argparse.SUPPRESS, "help": o.help}
            if o.type is _bool:
                kw.update(nargs="?", const=True, type=_bool)
            else:
                kw["type"] = o.type
            if o.multiple:
                kw["action"] = "append"
                kw.pop("nargs", None)
                kw.pop("const", None)
            p.add_argument(flag, **kw)
    return parser


def read_config(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve(command: str, explicit: dict, env=None) -> dict:
    """Merge defaults, config file, ``SPECREC_SEED`` and explicit flags for ``command``."""
    env = os.environ if env is None else env
    opts = {o.name: o for o in COMMANDS[command][1]}
    values = {name: ([] if o.multiple and o.default is None else o.default) for name, o in opts.items()}
    if "config" in explicit:
        for key, raw in read_config(explicit["config"]).items():
            if key not in opts:
                raise UsageError(f"unknown option {key!r} in config for {command}")
            o = opts[key]
            try:
                if o.multiple:
                    values[key] = [o.type(v.strip()) for v in raw.split(";") if v.strip()]
                else:
                    values[key] = o.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad value for {key}: {exc}") from None
    if "seed" in opts and env.get("SPECREC_SEED"):
        try:
            values["seed"] = int(env["SPECREC_SEED"])
        except ValueError:
            raise UsageError(f"SPECREC_SEED must be an integer, got {env['SPECREC_SEED']!r}") from None
    for key, value in explicit.items():
        if key in opts:
            values[key] = value
    missing = [n for n, o in opts.items() if o.required and values.get(n) in (None, [])]
    if missing:
        raise UsageError(f"{command}: missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return values


# helpers


def _out_dir(opts) -> Path:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def write_manifest(out: Path, command: str, opts: dict, inputs: list, outputs: list) -> None:
    manifest = {
        "command": command,
        "config": {k: _jsonable(v) for k, v in sorted(opts.items())},
        "seed": opts.get("seed"),
        "inputs": {str(p): sha256_file(p) for p in sorted({str(p) for p in inputs})},
        "outputs": {str(Path(p).relative_to(out)): sha256_file(p) for p in sorted(outputs)},
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _as_stored(cube: np.ndarray) -> np.ndarray:
    return cube.astype(np.float32).astype(np.float64)


def _illum_array(split) -> np.ndarray:
    return np.stack([L.values for L in split.illuminations])


def _match(net: NetConfig, split, what: str) -> None:
    m = len(split.illuminations)
    if net.m_illums != m:
        raise ConfigMismatch(f"{what} expects M={net.m_illums} illuminations but the corpus has M={m}")


def _metrics_table(rows: list[tuple[str, MetricsReport]]) -> str:
    lines = [MetricsReport.csv_header()]
    lines += [r.csv_row(tid) for tid, r in rows]
    mean = {k: float(np.mean([getattr(r, k) for _, r in rows])) for k in ("mae", "rmse", "sas", "psnr", "ssim")}
    lines.append("mean," + ",".join(repr(mean[k]) for k in ("mae", "rmse", "sas", "psnr", "ssim")))
    return "\n".join(lines) + "\n"


# commands


def cmd_synth(opts) -> int:
    out = _out_dir(opts)
    split = make_corpus(n_images=opts["n"], size=opts["size"], m_illums=opts["m"], seed=opts["seed"], n_css=opts["n_css"])
    params = {k: opts[k] for k in ("n", "size", "m", "n_css", "seed")}
    manifest = corpus_io.write_corpus(split, out, params)
    print(f"wrote {len(split.train)} train and {len(split.test)} test triples to {out}")
    files = [out / "manifest.json"] + [out / e["path"] for e in corpus_io._entries(manifest)]
    write_manifest(out, "synth", opts, [], files)
    return EXIT_OK


def cmd_render(opts) -> int:
    out = _out_dir(opts)
    grid = SamplingGrid.bands()
    cube = SpectralCube(grid, read_spc(opts["cube"]))
    css = read_css_csv(opts["css"])
    illums = [read_curve_csv(p) for p in opts["illum"]]
    if opts["mode"] == "fine":
        stack = synth_triple(cube, css, illums).input.data
    elif opts["mode"] == "discrete":
        stack = discrete_stack(cube, css, illums)
    else:
        raise UsageError("--mode must be fine or discrete")
    path = out / "stack.spc"
    write_spc(path, stack)
    print(f"wrote {stack.shape[0]}-channel stack to {path}")
    write_manifest(out, "render", opts, [opts["cube"], opts["css"], *opts["illum"]], [path])
    return EXIT_OK


def cmd_recover_linear(opts) -> int:
    out = _out_dir(opts)
    inputs = []
    truth = None
    css = None
    if opts["corpus"]:
        if not opts["triple"]:
            raise UsageError("--corpus needs --triple")
        root = Path(opts["corpus"])
        manifest = corpus_io.read_manifest(root)
        entry = next((t for t in manifest["triples"] if t["id"] == opts["triple"]), None)
        if entry is None:
            raise UsageError(f"no triple {opts['triple']!r} in {root}")
        stack = read_spc(root / entry["input"]["path"])
        truth = read_spc(root / entry["truth"]["path"])
        by_label = {e["label"]: e for e in manifest["illuminations"]}
        illum_paths = [root / by_label[x]["path"] for x in entry["illuminations"]]
        cam = {e["label"]: e for e in manifest["css"]}[entry["css"]]
        if opts["use_true_css"]:
            css = read_css_csv(root / cam["path"])
            inputs.append(root / cam["path"])
        inputs += [root / entry["input"]["path"], root / entry["truth"]["path"], *illum_paths]
    else:
        if not opts["input"] or not opts["illum"]:
            raise UsageError("give --corpus/--triple or --input with --illum")
        if opts["use_true_css"]:
            raise UsageError("--use-true-css needs --corpus/--triple")
        stack = read_spc(opts["input"])
        illum_paths = [Path(p) for p in opts["illum"]]
        inputs += [opts["input"], *illum_paths]
        if opts["truth"]:
            truth = read_spc(opts["truth"])
            inputs.append(opts["truth"])
    if css is None:
        if not opts["css"]:
            raise UsageError("no camera given: pass --css or --use-true-css")
        css = read_css_csv(opts["css"])
        inputs.append(opts["css"])
    illums = np.stack([read_curve_csv(p).values for p in illum_paths])
    H = system_matrix(css.data, illums)
    if H.shape[0] != stack.shape[0]:
        raise ConfigMismatch(f"stack has {stack.shape[0]} channels but {len(illums)} illuminations were given")
    P = projection_operator(H, opts["ridge"])
    parallel = np.einsum("br,rhw->bhw", P, stack)
    # report metrics for the cube exactly as stored (SPC1 is float32)
    recovered = _as_stored(opts["omega"] * parallel)
    residual = float(np.max(np.abs(np.einsum("rb,bhw->rhw", H, parallel) - stack)))

    outputs = [out / "recovered.spc", out / "report.txt"]
    write_spc(out / "recovered.spc", recovered)
    lines = [f"bands={recovered.shape[0]}", f"observation_residual={residual!r}"]
    if truth is not None:
        report = evaluate(recovered, truth)
        lines.append(report.to_text().rstrip("\n"))
        band_lines = ["wavelength_nm,mae"] + [
            f"{wl!r},{v!r}" for wl, v in zip(SamplingGrid.bands().wavelengths.tolist(), report.band_mae.tolist())
        ]
        (out / "band_mae.csv").write_text("\n".join(band_lines) + "\n")
        outputs.append(out / "band_mae.csv")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    write_manifest(out, "recover-linear", opts, inputs, outputs)
    return EXIT_OK


def _net_config(opts, m: int) -> NetConfig:
    if opts["ablation"] not in ABLATIONS:
        raise UsageError(f"unknown ablation {opts['ablation']!r}")
    return NetConfig(
        m_illums=m,
        base_channels=opts["base_channels"],
        scales=opts["scales"],
        patch=opts["patch"],
        relative_ridge=opts["relative_ridge"],
        **ABLATIONS[opts["ablation"]],
    )


def _corpus_inputs(root) -> list[Path]:
    root = Path(root)
    return [root / "manifest.json"]


def cmd_train(opts) -> int:
    split = corpus_io.load_corpus(opts["corpus"])
    net = _net_config(opts, len(split.illuminations))
    train = TrainConfig(
        pretrain_lr=opts["lr"],
        pretrain_steps=opts["steps"],
        batch_size=opts["batch"],
        cosine=opts["cosine"],
        seed=opts["seed"],
    )
    out = _out_dir(opts)
    data = PatchData.from_triples(split.train, opts["patch"], opts["stride"])
    objective = Objective(_illum_array(split), net)
    params, log = pretrain(init_params(net, opts["seed"]), data, objective, train)
    ckpt, log_path = out / "model.tnw", out / "train_log.csv"
    checkpoint.save(ckpt, params, net, {"phase": "pretrain", "train": train.to_dict()})
    log_path.write_text(log.to_csv())
    pre = log.values("pretrain", "pre")
    if pre:
        print(f"L_pre {pre[0]:.4f} -> {pre[-1]:.4f} over {len(pre)} steps")
    write_manifest(out, "train", opts, _corpus_inputs(opts["corpus"]), [ckpt, log_path])
    return EXIT_OK


def cmd_meta_train(opts) -> int:
    split = corpus_io.load_corpus(opts["corpus"])
    params, net, _ = checkpoint.load(opts["init"])
    _match(net, split, "checkpoint")
    if net.patch != opts["patch"]:
        net = NetConfig.from_dict({**net.to_dict(), "patch": opts["patch"]})
    train = TrainConfig(
        alpha=opts["alpha"],
        beta=opts["beta"],
        n_inner=opts["n_inner"],
        meta_steps=opts["meta_steps"],
        meta_batch=opts["meta_batch"],
        seed=opts["seed"],
    )
    out = _out_dir(opts)
    data = PatchData.from_triples(split.train, opts["patch"], opts["stride"])
    objective = Objective(_illum_array(split), net)
    params, log = meta_train(params, data, objective, train)
    ckpt, log_path = out / "model.tnw", out / "meta_log.csv"
    checkpoint.save(ckpt, params, net, {"phase": "meta", "train": train.to_dict()})
    log_path.write_text(log.to_csv())
    pri = log.values("meta", "pri")
    if pri:
        print(f"meta L_pri {pri[0]:.4f} -> {pri[-1]:.4f} over {len(pri)} steps")
    write_manifest(out, "meta-train", opts, _corpus_inputs(opts["corpus"]) + [opts["init"]], [ckpt, log_path])
    return EXIT_OK


def _run_test_split(opts, command: str, n: int, alpha: float) -> int:
    split = corpus_io.load_corpus(opts["corpus"])
    params, net, _ = checkpoint.load(opts["ckpt"])
    _match(net, split, "checkpoint")
    out = _out_dir(opts)
    (out / "recovered").mkdir(exist_ok=True)
    objective = Objective(_illum_array(split), net)
    rows, aux_lines, outputs = [], ["id,aux_before,aux_after"], []
    for t in split.test:
        tid = t.meta["id"]
        cube, adapted = adapt_test_time(params, t.input, objective, alpha, n)
        path = out / "recovered" / f"{tid}.spc"
        write_spc(path, cube.data)
        outputs.append(path)
        rows.append((tid, evaluate(_as_stored(cube.data), t.truth.data)))
        stack = t.input.data[None]
        before = objective.aux(params, stack)[0]
        after = objective.aux(adapted, stack)[0]
        aux_lines.append(f"{tid},{before!r},{after!r}")
    table = out / "metrics.csv"
    table.write_text(_metrics_table(rows))
    aux = out / "aux_loss.csv"
    aux.write_text("\n".join(aux_lines) + "\n")
    outputs += [table, aux]
    print(table.read_text(), end="")
    write_manifest(out, command, opts, _corpus_inputs(opts["corpus"]) + [opts["ckpt"]], outputs)
    return EXIT_OK


def _sweep_counts(text: str) -> list[int]:
    try:
        counts = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--sweep must be comma-separated integers, got {text!r}") from None
    if any(n < 0 for n in counts):
        raise UsageError("--sweep step counts must be >= 0")
    return counts


def _write_sweep(opts, counts: list[int]) -> Path:
    """Mean test metrics and auxiliary loss for each adaptation step count."""
    split = corpus_io.load_corpus(opts["corpus"])
    params, net, _ = checkpoint.load(opts["ckpt"])
    objective = Objective(_illum_array(split), net)
    lines = ["n,mae,rmse,sas,psnr,ssim,aux"]
    for n in counts:
        reports, aux = [], []
        for t in split.test:
            cube, adapted = adapt_test_time(params, t.input, objective, opts["alpha"], n)
            reports.append(evaluate(_as_stored(cube.data), t.truth.data))
            aux.append(objective.aux(adapted, t.input.data[None])[0])
        mean = [float(np.mean([getattr(r, k) for r in reports])) for k in ("mae", "rmse", "sas", "psnr", "ssim")]
        lines.append(",".join([str(n)] + [repr(v) for v in mean + [float(np.mean(aux))]]))
    path = Path(opts["out"]) / "sweep.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def cmd_adapt(opts) -> int:
    if opts["n"] < 0:
        raise UsageError("--n must be >= 0")
    counts = _sweep_counts(opts["sweep"])
    code = _run_test_split(opts, "adapt", opts["n"], opts["alpha"])
    if counts:
        path = _write_sweep(opts, counts)
        print(path.read_text(), end="")
        # refresh the run manifest so it covers the sweep table as well
        out = Path(opts["out"])
        outputs = sorted(out.glob("recovered/*.spc")) + [out / "metrics.csv", out / "aux_loss.csv", path]
        write_manifest(out, "adapt", opts, _corpus_inputs(opts["corpus"]) + [opts["ckpt"]], outputs)
    return code


def cmd_eval(opts) -> int:
    return _run_test_split(opts, "eval", 0, 0.0)


def write_pgm(path, error: np.ndarray) -> float:
    """Plain PGM with the maximum mapped to 255; returns that maximum."""
    peak = float(np.max(error))
    scaled = np.zeros(error.shape, dtype=int) if peak == 0 else np.rint(error / peak * 255).astype(int)
    h, w = error.shape
    lines = ["P2", f"# max_error={peak!r}", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in scaled]
    Path(path).write_text("\n".join(lines) + "\n")
    return peak


def read_pgm_max(path) -> float:
    for line in Path(path).read_text().splitlines():
        if line.startswith("# max_error="):
            return float(line.split("=", 1)[1])
    raise ValueError(f"{path}: no max_error comment")


def cmd_export(opts) -> int:
    rec = read_spc(opts["recovered"])
    ref = read_spc(opts["truth"])
    if rec.shape != ref.shape:
        raise ConfigMismatch(f"cube shapes differ: {rec.shape} vs {ref.shape}")
    for r, c in opts["pixel"]:
        if not (0 <= r < rec.shape[1] and 0 <= c < rec.shape[2]):
            raise UsageError(f"pixel {r},{c} outside a {rec.shape[1]}x{rec.shape[2]} image")
    out = _out_dir(opts)
    pgm = out / "error_map.pgm"
    peak = write_pgm(pgm, pixel_mae_map(rec, ref))
    outputs = [pgm]
    wl = SamplingGrid(420.0, 10.0, rec.shape[0]).wavelengths
    summary = ["row,col,corr"]
    for r, c in opts["pixel"]:
        corr = pearson(ref[:, r, c], rec[:, r, c])
        path = out / f"curve_{r}_{c}.csv"
        lines = ["wavelength_nm,truth,recovered"]
        lines += [f"{w!r},{t!r},{v!r}" for w, t, v in zip(wl.tolist(), ref[:, r, c].tolist(), rec[:, r, c].tolist())]
        note = " (undefined: constant spectrum)" if math.isnan(corr) else ""
        lines.append(f"# corr={corr!r}{note}")
        path.write_text("\n".join(lines) + "\n")
        summary.append(f"{r},{c},{corr!r}")
        outputs.append(path)
    corr_path = out / "correlations.csv"
    corr_path.write_text("\n".join(summary) + "\n")
    outputs.append(corr_path)
    print(f"max per-pixel error {peak:.6g}; exported {len(opts['pixel'])} curve(s)")
    write_manifest(out, "export", opts, [opts["recovered"], opts["truth"]], outputs)
    return EXIT_OK


def cmd_check(opts) -> int:
    from .selftest import run_all

    results = run_all()
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_USAGE


HANDLERS = {
    "synth": cmd_synth,
    "render": cmd_render,
    "recover-linear": cmd_recover_linear,
    "train": cmd_train,
    "meta-train": cmd_meta_train,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "export": cmd_export,
    "check": cmd_check,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        ns = build_parser().parse_args(argv)
        explicit = {k: v for k, v in vars(ns).items() if k != "command"}
        opts = resolve(ns.command, explicit)
        return HANDLERS[ns.command](opts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigMismatch as exc:
        print(f"config mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, corpus_io.CorpusError, checkpoint.CheckpointError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # malformed file content surfaces as ValueError from the readers
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
