"""``pointpe`` command line: dataset, train, eval, register, diagnose.

Every subcommand resolves its parameters as defaults < JSON config file
(``--config``) < explicit flags, persists the resolved document as a
RunConfig next to its outputs and stamps the RunConfig hash into every
file. Re-running ``pointpe <cmd> --config <runconfig>`` reproduces the CSV
bodies byte for byte.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime as _dt
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import diagnostics
from .classifier import ClassifierModel, TrainConfig, evaluate, train_on_clouds
from .corruptions import CorruptionSpec, canonical_kind, severity_table
from .encoders import ENCODER_KINDS, build_encoder
from .errors import ConfigError, DataError, NumericalError, ParseError
from .outputs import config_hash, header_comments, svg_line_plot, write_csv, write_svg
from .pointcloud import (
    SHAPES,
    PointCloud,
    atomic_write_text,
    load_manifest,
    load_off,
    make_synthetic_dataset,
    normalize,
    sample_surface,
    save_xyz,
    write_manifest,
)
from .pooling import POOL_KINDS
from .registration import (
    SUCCESS_CRITERION,
    SWEEP_COLUMNS,
    RegistrationOptions,
    noise_sweep,
    registration_sources,
)
from .rng import child_seed

OUT_ENV = "POINTPE_OUT"
DEFAULT_OUT = "pointpe_out"

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# defaults per subcommand; every key is also a flag (underscores -> dashes)
DEFAULTS = {
    "dataset": {
        "synthetic": None,
        "off_dir": None,
        "points": 1024,
        "seed": 0,
        "stretch": 0.0,
        "rotate": False,
        "name": "dataset",
    },
    "train": {
        "manifest": None,
        "encoder": "rff",
        "dim": 1024,
        "scale": 0.9,
        "encoder_seed": 0,
        "pool": "mean",
        "epochs": 300,
        "batch_size": 32,
        "lr": 0.1,
        "lr_min": 1e-3,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "augment": False,
        "seed": 0,
        "name": "model",
    },
    "eval": {
        "checkpoint": None,
        "manifest": None,
        "corruption": "none",
        "levels": "all",
        "seed": 0,
        "encoder": None,
        "dim": None,
        "scale": None,
        "encoder_seed": None,
        "workers": 1,
        "name": "eval",
    },
    "register": {
        "manifest": None,
        "shapes": "cube,cone,helix,torus,cylinder",
        "points": 512,
        "shape_stretch": 0.3,
        "shape_warp": 0.3,
        "noise": "gaussian",
        "sigmas": "0.01:0.1:0.01",
        "pool": "mean,max",
        "encoder": "rff",
        "dim": 512,
        "scale": 0.5,
        "encoder_seed": 0,
        "trials": 50,
        "seed": 0,
        "max_iters": 50,
        "tol": 1e-7,
        "step": 1e-3,
        "damping": 1e-6,
        "init_centroid": True,
        "workers": 1,
        "trace": False,
        "name": "register",
    },
    "diagnose": {
        "what": "distance",
        "encoder": "rff",
        "dim": 4096,
        "scales": "0.1,0.5,2,8",
        "distances": "0:2:0.1",
        "draws": 50,
        "freq_dim": 3,
        "bandwidth": 8.0,
        "samples": 100000,
        "illustration_points": "0.2,0.35,0.5,0.8",
        "noise": "0.01,0.05",
        "grid": 200,
        "seed": 0,
        "svg": True,
        "name": "diagnose",
    },
}

_HELP = {
    "config": "JSON file mirroring the flag names (underscored); flags override it",
    "out": f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})",
    "synthetic": "synthetic suite as CLASSESxPER_CLASS, e.g. 6x200 (classes from %s)" % ",".join(SHAPES),
    "off_dir": "directory of OFF meshes; each subdirectory is a class",
    "points": "points per cloud",
    "seed": "master RNG seed",
    "stretch": "per-axis random scale range [1-s, 1+s] for synthetic instances",
    "rotate": "apply a random rotation to every synthetic instance",
    "name": "base name of the output files",
    "manifest": "dataset manifest JSON (list of {path, label})",
    "encoder": "per-point embedding kind: " + ",".join(ENCODER_KINDS),
    "dim": "embedding width K",
    "scale": "encoder scale (RFF frequency std)",
    "encoder_seed": "seed of the frozen encoder",
    "pool": "pooling kind(s): " + ",".join(POOL_KINDS),
    "epochs": "training epochs",
    "batch_size": "mini-batch size",
    "lr": "initial SGD learning rate",
    "lr_min": "final learning rate of the cosine schedule",
    "momentum": "SGD momentum",
    "weight_decay": "L2 weight decay",
    "augment": "per-epoch random scaling in [2/3, 3/2] and shift in [-0.2, 0.2]",
    "checkpoint": "checkpoint written by `train`",
    "corruption": "corruption kind or 'none'",
    "levels": "'all' or comma list of severity levels 1..10",
    "shapes": "synthetic shapes used when no manifest is given",
    "shape_stretch": "per-axis stretch of synthetic registration shapes",
    "shape_warp": "std of the random quadratic warp of synthetic registration shapes",
    "noise": "target noise kind (gaussian)",
    "sigmas": "noise std values, START:STOP:STEP (inclusive) or comma list",
    "trials": "registration trials per (pooling, sigma)",
    "max_iters": "Gauss-Newton iteration cap",
    "tol": "step-norm convergence tolerance",
    "step": "finite-difference step of the Jacobian",
    "damping": "initial Levenberg damping",
    "trace": "also write per-trial JSON traces",
    "init_centroid": "start each registration from the centroid-matching translation",
    "workers": "worker processes for independent sweep cells (outputs do not depend on it)",
    "what": "diagnostic: distance, frequency or illustration",
    "scales": "comma list of encoder scales (distance)",
    "distances": "point distances, START:STOP:STEP or comma list (distance)",
    "draws": "random redraws averaged per distance (distance)",
    "freq_dim": "number of summed uniforms D (frequency)",
    "bandwidth": "uniform half-width B (frequency)",
    "samples": "Monte Carlo samples (frequency)",
    "illustration_points": "1D cloud in (0, 1) (illustration)",
    "grid": "sample count of the illustration curves",
    "svg": "also write an SVG plot",
}

_SCHEMAS = {
    "dataset": "writes <name>/<shape>_<i>.xyz and <name>.manifest.json",
    "train": "writes <name>.npz and <name>.curve.csv (epoch, lr, loss, train_acc)",
    "eval": "writes <name>.csv with columns corruption, level, pooling, scale, error_rate",
    "register": "writes <name>.csv with columns " + ", ".join(SWEEP_COLUMNS) + ", success_rate",
    "diagnose": "writes <name>.csv (+ .svg): distance -> scale, distance, mean, std, expected; "
    "frequency -> dim, bandwidth, samples, variance, variance_se, target, ks_distance, hist_max_dev, density_ratio; "
    "illustration -> t and one column per curve",
}


_TYPES = {"dim": int, "scale": float, "encoder_seed": int}


def _flag_type(key, default):
    if key in _TYPES:
        return _TYPES[key]
    if isinstance(default, bool):
        return None
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pointpe", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, defaults in DEFAULTS.items():
        sp = sub.add_parser(
            cmd,
            help=_SCHEMAS[cmd],
            description=_SCHEMAS[cmd],
            argument_default=argparse.SUPPRESS,
        )
        sp.add_argument("--config", help=_HELP["config"])
        sp.add_argument("--out", help=_HELP["out"])
        for key, default in defaults.items():
            flag = "--" + key.replace("_", "-")
            text = f"{_HELP[key]} (default: {default})"
            if isinstance(default, bool):
                sp.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, help=text)
            else:
                sp.add_argument(flag, dest=key, type=_flag_type(key, default), help=text)
    return p


def resolve(cmd: str, given: dict) -> tuple[dict, Path]:
    """Merge defaults, config file and explicit flags; returns (params, out dir)."""
    params = dict(DEFAULTS[cmd])
    out = given.pop("out", None)
    cfg_path = given.pop("config", None)
    if cfg_path is not None:
        try:
            doc = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {cfg_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{cfg_path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{cfg_path}: config must be a JSON object")
        doc = dict(doc)
        if doc.pop("subcommand", cmd) != cmd:
            raise ConfigError(f"{cfg_path} is a config for another subcommand")
        doc.pop("config_hash", None)
        unknown = set(doc) - set(params)
        if unknown:
            raise ConfigError(f"{cfg_path}: unknown keys {sorted(unknown)}")
        params.update(doc)
    params.update(given)
    out_dir = Path(out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    return params, out_dir


def _run_config(cmd: str, params: dict) -> tuple[dict, str]:
    doc = {"subcommand": cmd, **params}
    return doc, config_hash(doc)


def _persist(out_dir: Path, cmd: str, params: dict) -> str:
    doc, h = _run_config(cmd, params)
    atomic_write_text(out_dir / f"{params['name']}.runconfig.json", json.dumps({**doc, "config_hash": h}, indent=1, sort_keys=True) + "\n")
    return h


def _comments(kind: str, h: str, units: Optional[str] = None) -> list[str]:
    return header_comments(kind, h, units) + [f"written: {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}"]


def parse_range(text: str) -> list[float]:
    """``"a:b:s"`` (inclusive of ``b``) or a comma list of numbers."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b, s = (float(v) for v in text.split(":"))
            if s <= 0 or b < a:
                raise ConfigError(f"bad range {text!r}")
            n = int(round((b - a) / s)) + 1
            return [round(a + i * s, 12) for i in range(n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse numbers from {text!r}") from None


def _map(fn, jobs: list, workers: int) -> list:
    """``[fn(*job) for job in jobs]``, fanned out over processes when ``workers > 1``."""
    if workers < 1:
        raise ConfigError("--workers must be >= 1")
    if workers == 1 or len(jobs) < 2:
        return [fn(*job) for job in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _split(text) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _pool_list(text) -> list[str]:
    pools = _split(text)
    bad = [p for p in pools if p not in POOL_KINDS]
    if bad or not pools:
        raise ConfigError(f"unknown pooling {bad}; expected {POOL_KINDS}")
    return pools


# ---------------------------------------------------------------------------
# subcommands


def cmd_dataset(params: dict, out_dir: Path) -> int:
    if bool(params["synthetic"]) == bool(params["off_dir"]):
        raise ConfigError("give exactly one of --synthetic or --off-dir")
    if params["points"] < 1:
        raise ConfigError("--points must be >= 1")
    name = params["name"]
    data_dir = out_dir / name
    if params["synthetic"]:
        try:
            c, per = (int(v) for v in str(params["synthetic"]).lower().split("x"))
        except ValueError:
            raise ConfigError("--synthetic must look like 6x200") from None
        if not 1 <= c <= len(SHAPES) or per < 1:
            raise ConfigError(f"--synthetic needs 1..{len(SHAPES)} classes and >= 1 per class")
        clouds = make_synthetic_dataset(
            per, params["points"], params["seed"], SHAPES[:c], stretch=params["stretch"], rotate=params["rotate"]
        )
        names = [f"{SHAPES[pc.label]}_{i % per:05d}.xyz" for i, pc in enumerate(clouds)]
    else:
        root = Path(params["off_dir"])
        if not root.is_dir():
            raise DataError(f"not a directory: {root}")
        classes = sorted(d for d in root.iterdir() if d.is_dir() and any(d.glob("*.off")))
        groups = [(d.name, sorted(d.glob("*.off"))) for d in classes]
        if not groups and any(root.glob("*.off")):
            groups = [(root.name, sorted(root.glob("*.off")))]
        if not groups:
            raise DataError(f"no OFF files under {root}")
        clouds, names = [], []
        for label, (cls, files) in enumerate(groups):
            for f in files:
                pc = sample_surface(load_off(f), params["points"], child_seed(params["seed"], len(clouds)))
                clouds.append(PointCloud(normalize(pc).points, label))
                names.append(f"{cls}_{f.stem}.xyz")
    h = _persist(out_dir, "dataset", params)
    records = []
    for pc, fname in zip(clouds, names):
        save_xyz(data_dir / fname, pc)
        records.append({"path": f"{name}/{fname}", "label": pc.label})
    write_manifest(out_dir / f"{name}.manifest.json", records)
    counts = np.bincount([pc.label for pc in clouds])
    print(f"wrote {len(clouds)} clouds in {len(counts)} classes to {data_dir} (config {h})")
    for label, n in enumerate(counts):
        print(f"  class {label}: {n}")
    return EXIT_OK


def _encoder_doc(params: dict) -> dict:
    return {"kind": params["encoder"], "dim_in": 3, "dim_out": params["dim"], "scale": params["scale"], "seed": params["encoder_seed"]}


def cmd_train(params: dict, out_dir: Path) -> int:
    if not params["manifest"]:
        raise ConfigError("--manifest is required")
    if params["pool"] not in POOL_KINDS:
        raise ConfigError(f"unknown pooling {params['pool']!r}")
    cfg = TrainConfig(
        epochs=params["epochs"],
        batch_size=params["batch_size"],
        lr=params["lr"],
        lr_min=params["lr_min"],
        momentum=params["momentum"],
        weight_decay=params["weight_decay"],
        augment_scale=params["augment"],
        augment_translate=params["augment"],
        seed=params["seed"],
    )
    enc_doc = _encoder_doc(params)
    encoder = build_encoder(**{k: enc_doc[k] for k in ("kind", "dim_in", "dim_out", "scale", "seed")})
    clouds = load_manifest(params["manifest"])
    model = train_on_clouds(clouds, encoder, params["pool"], cfg)
    h = _persist(out_dir, "train", params)
    meta = {
        "encoder": encoder.to_dict(),
        "encoder_hash": config_hash(encoder.to_dict()),
        "encoder_checksum": encoder.checksum(),
        "pooling": params["pool"],
        "config_hash": h,
    }
    name = params["name"]
    model.save(out_dir / f"{name}.npz", meta)
    cols = ["epoch", "lr", "loss", "train_acc"]
    write_csv(out_dir / f"{name}.curve.csv", cols, model.history, _comments("train curve", h, "loss in nats, accuracy in [0, 1]"))
    last = model.history[-1]
    print(f"trained {params['encoder']}/{params['pool']} head: final loss {last['loss']:.4f}, train acc {last['train_acc']:.4f} (config {h})")
    return EXIT_OK


def _checked_encoder(meta: dict, params: dict):
    doc = dict(meta["encoder"])
    overrides = {"encoder": "kind", "dim": "dim_out", "scale": "scale", "encoder_seed": "seed"}
    claimed = dict(doc)
    for flag, key in overrides.items():
        if params.get(flag) is not None:
            claimed[key] = params[flag]
    if config_hash(claimed) != meta["encoder_hash"]:
        raise ConfigError(f"encoder {claimed} does not match the checkpoint encoder {doc} (hash mismatch)")
    enc = build_encoder(doc["kind"], doc["dim_in"], doc["dim_out"], doc["scale"], doc["seed"])
    if enc.checksum() != meta["encoder_checksum"]:
        raise ConfigError("rebuilt encoder parameters differ from the checkpoint's")
    return enc


def _eval_cell(model, encoder, pooling, clouds, spec) -> float:
    return evaluate(model, encoder, pooling, clouds, spec).error_rate


def cmd_eval(params: dict, out_dir: Path) -> int:
    if not params["checkpoint"] or not params["manifest"]:
        raise ConfigError("--checkpoint and --manifest are required")
    kind = str(params["corruption"])
    if kind != "none":
        kind = canonical_kind(kind)
        severity_table(kind)  # rejects kinds without a ladder
        lv = str(params["levels"])
        levels = list(range(1, 11)) if lv == "all" else [int(v) for v in _split(lv)]
        if any(not 1 <= v <= 10 for v in levels) or not levels:
            raise ConfigError("--levels must be 'all' or values in 1..10")
    model, meta = ClassifierModel.load(params["checkpoint"])
    encoder = _checked_encoder(meta, params)
    pooling = meta["pooling"]
    clouds = load_manifest(params["manifest"])
    if kind == "none":
        cells = [("none", 0, None)]
    else:
        cells = [(kind, v, CorruptionSpec(kind, level=v, seed=params["seed"])) for v in levels]
    errors = _map(_eval_cell, [(model, encoder, pooling, clouds, spec) for _, _, spec in cells], params["workers"])
    rows = [
        {"corruption": k, "level": v, "pooling": pooling, "scale": encoder.scale, "error_rate": e}
        for (k, v, _), e in zip(cells, errors)
    ]
    h = _persist(out_dir, "eval", params)
    cols = ["corruption", "level", "pooling", "scale", "error_rate"]
    write_csv(out_dir / f"{params['name']}.csv", cols, rows, _comments("eval", h, "error_rate in [0, 1]"))
    for r in rows:
        print(f"{r['corruption']:>20} level {r['level']:>2}: error {r['error_rate']:.4f}")
    return EXIT_OK


def _register_cell(clouds, encoder, pooling, sigmas, trials, seed, opts, want_trace):
    trace = [] if want_trace else None
    return noise_sweep(clouds, encoder, [pooling], sigmas, trials, seed, opts, trace), trace


def cmd_register(params: dict, out_dir: Path) -> int:
    if params["noise"] != "gaussian":
        raise ConfigError("only gaussian target noise is supported")
    sigmas = parse_range(params["sigmas"])
    if any(s < 0 for s in sigmas) or not sigmas:
        raise ConfigError("--sigmas must be non-negative")
    pools = _pool_list(params["pool"])
    if params["trials"] < 1:
        raise ConfigError("--trials must be >= 1")
    opts = RegistrationOptions(
        params["max_iters"], params["tol"], params["step"], params["damping"], init_centroid=params["init_centroid"]
    )
    encoder = build_encoder(params["encoder"], 3, params["dim"], params["scale"], params["encoder_seed"])
    if params["manifest"]:
        clouds = load_manifest(params["manifest"])
    else:
        clouds = registration_sources(
            _split(params["shapes"]), params["points"], params["shape_stretch"], params["shape_warp"], params["seed"]
        )
    jobs = [(clouds, encoder, p, sigmas, params["trials"], params["seed"], opts, params["trace"]) for p in pools]
    rows, trace = [], [] if params["trace"] else None
    for part_rows, part_trace in _map(_register_cell, jobs, params["workers"]):
        rows += part_rows
        if trace is not None:
            trace += part_trace
    h = _persist(out_dir, "register", params)
    cols = list(SWEEP_COLUMNS) + ["success_rate"]
    out_rows = [[getattr(r, c) for c in SWEEP_COLUMNS] + [r.success_rate] for r in rows]
    comments = _comments("register", h, "sigma in normalized-cloud units, errors in degrees / units") + [
        f"success: {SUCCESS_CRITERION}"
    ]
    write_csv(out_dir / f"{params['name']}.csv", cols, out_rows, comments)
    if trace is not None:
        atomic_write_text(out_dir / f"{params['name']}.trace.json", json.dumps(trace, indent=1) + "\n")
    for r in rows:
        print(f"{r.pooling:>6} sigma {r.sigma:.3f}: success {r.success_rate:.2f}")
    return EXIT_OK


def cmd_diagnose(params: dict, out_dir: Path) -> int:
    what = params["what"]
    name = params["name"]
    if what == "distance":
        scales = parse_range(params["scales"])
        dists = parse_range(params["distances"])
        rows, series = [], {}
        for i, s in enumerate(scales):
            spec = {"kind": params["encoder"], "dim_in": 3, "dim_out": params["dim"], "scale": s}
            curve = diagnostics.distance_curve(spec, dists, params["draws"], child_seed(params["seed"], i))
            expected = (
                diagnostics.rff_expected_distance(params["dim"] // 2, s, dists)
                if params["encoder"] == "rff"
                else np.full(len(dists), np.nan)
            )
            for r, e in zip(curve, expected):
                rows.append([s, r.distance, r.mean, r.std, float(e)])
            series[f"scale {s:g}"] = ([r.distance for r in curve], [r.mean for r in curve])
        cols = ["scale", "distance", "mean", "std", "expected"]
        units = "distance in normalized-cloud units; mean/std of squared encoding distance"
        title, xl, yl = "Encoding distance vs point distance", "point distance", "squared encoding distance"
    elif what == "frequency":
        rep = diagnostics.frequency_law_check(params["freq_dim"], params["bandwidth"], params["samples"], params["seed"])
        cols = ["dim", "bandwidth", "samples", "variance", "variance_se", "target", "ks_distance", "hist_max_dev", "density_ratio"]
        ratio = rep.density_ratio if rep.density_ratio is not None else ""
        rows = [
            [rep.dim, rep.bandwidth, rep.samples, rep.variance, rep.variance_se, rep.target, rep.ks_distance, rep.hist_max_dev, ratio]
        ]
        units = "frequencies in cycles per unit"
        series = {}
    elif what == "illustration":
        pts = parse_range(params["illustration_points"])
        cols, rows = diagnostics.encoding_illustration(pts, parse_range(params["noise"]) if params["noise"] else [], params["grid"])
        units = "t in [0, 1]; encoding values are dimensionless"
        series = {c: ([r[0] for r in rows], [r[k] for r in rows]) for k, c in enumerate(cols) if k > 0}
        title, xl, yl = "1D encodings", "t", "value"
    else:
        raise ConfigError(f"unknown diagnostic {what!r}; expected distance, frequency or illustration")
    h = _persist(out_dir, "diagnose", params)
    write_csv(out_dir / f"{name}.csv", cols, rows, _comments(f"diagnose {what}", h, units))
    if params["svg"] and series:
        svg = svg_line_plot(series, title, xl, yl).replace("<svg ", f"<!-- config_hash: {h} -->\n<svg ", 1)
        write_svg(out_dir / f"{name}.svg", svg)
    print(f"wrote {out_dir / (name + '.csv')} ({len(rows)} rows, config {h})")
    return EXIT_OK


COMMANDS = {
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "register": cmd_register,
    "diagnose": cmd_diagnose,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    cmd = args.pop("command")
    try:
        params, out_dir = resolve(cmd, args)
        return COMMANDS[cmd](params, out_dir)
    except ConfigError as exc:
        print(f"pointpe {cmd}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"pointpe {cmd}: parse error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, OSError) as exc:
        print(f"pointpe {cmd}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"pointpe {cmd}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
