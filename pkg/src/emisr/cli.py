"""Command-line entry point: ``emisr <command> [--config FILE] [--key value ...]``.

Each command declares its settings in a schema. Values come from the schema
defaults, then an optional key=value config file, then command-line flags.
Everything is validated before any file is written. Exit codes: 0 success,
1 domain/data error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import platform
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .dataset import (Region, build_pairs, coarsen, read_manifest, split_random,
                      split_time, split_time_area, subsample_to_cardinality, synth_emissions,
                      write_manifest, write_pair_files)
from .errors import ConfigError, DomainError, EmisrError, StateError
from .evaluation import (bicubic_baseline, evaluate_pairs, read_table, super_resolve, table_lines,
                         write_details, write_table)
from .grid import COMPOUNDS, read_grid, render_heatmap, write_grid
from .nn.models import ARCHITECTURES, Model, ModelConfig, load_checkpoint
from .training import ScheduleConfig, TrainConfig, train
from .transforms import QuantileTransform, fit_quantile_transform, load_transform, write_qtx

MAPS_HEADER = "# map-id, path, year, month, compound"


# --- settings schema ----------------------------------------------------------

@dataclass(frozen=True)
class Setting:
    name: str
    kind: str                # int, float, str, bool, path_in, path_out, choice, ints
    default: object = None
    help: str = ""
    choices: tuple = ()
    low: float = None
    high: float = None
    required: bool = False


def _parse_value(s: Setting, raw):
    if raw is None:
        return None
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if s.kind == "int":
            return int(raw)
        if s.kind == "float":
            return float(raw)
        if s.kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if s.kind == "ints":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if s.kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{s.name}: cannot parse {raw!r} as {s.kind}", s.name) from None
    return raw


def _check(s: Setting, value):
    if value is None:
        if s.required:
            raise ConfigError(f"{s.name} is required", s.name)
        return
    if s.choices and value not in s.choices:
        raise ConfigError(f"{s.name} must be one of {', '.join(map(str, s.choices))}; got {value!r}", s.name)
    if s.low is not None and value < s.low:
        raise ConfigError(f"{s.name} must be >= {s.low}, got {value}", s.name)
    if s.high is not None and value > s.high:
        raise ConfigError(f"{s.name} must be <= {s.high}, got {value}", s.name)
    if s.kind == "path_in" and not os.path.exists(value):
        raise ConfigError(f"{s.name}: {value} does not exist", s.name)
    if s.kind == "path_out":
        parent = os.path.dirname(os.path.abspath(value))
        if os.path.exists(value) and os.path.isdir(value) != s.name.endswith("dir"):
            raise ConfigError(f"{s.name}: {value} exists with the wrong type", s.name)
        if not os.path.isdir(parent) and not s.name.endswith("dir"):
            raise ConfigError(f"{s.name}: directory {parent} does not exist", s.name)


def read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}", "config") from exc
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value", "config")
        key, value = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_settings(schema, file_values: dict, flag_values: dict) -> dict:
    known = {s.name for s in schema}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigError(f"unknown setting {unknown[0]!r}", unknown[0])
    cfg = {}
    for s in schema:
        raw = s.default
        if s.name in file_values:
            raw = file_values[s.name]
        if flag_values.get(s.name) is not None:
            raw = flag_values[s.name]
        cfg[s.name] = _parse_value(s, raw)
        _check(s, cfg[s.name])
    return cfg


def config_hash(cfg: dict) -> str:
    text = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_stamp(path, command, cfg):
    import matplotlib

    lines = [f"command={command}", f"config_sha256={config_hash(cfg)}"]
    lines += [f"seed.{k}={cfg[k]}" for k in sorted(cfg) if "seed" in k]
    lines += [f"version.emisr={__version__}", f"version.numpy={np.__version__}",
              f"version.matplotlib={matplotlib.__version__}",
              f"version.python={platform.python_version()}"]
    lines += [f"config.{k}={cfg[k]}" for k in sorted(cfg)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# --- commands -----------------------------------------------------------------

MODEL_SETTINGS = (
    Setting("architecture", "str", "resnet_t", "network family", choices=ARCHITECTURES),
    Setting("alpha", "int", 4, "scale factor", choices=(2, 4)),
    Setting("base_width", "int", 32, "resnet_t feature width", low=1),
    Setting("n_residual_blocks", "int", 4, "resnet_t residual blocks", low=0),
    Setting("srcnn_kernels", "ints", "9,1,5", "srcnn_t kernel sizes"),
    Setting("srcnn_widths", "ints", "64,32", "srcnn_t layer widths"),
    Setting("activation", "str", "prelu", "activation", choices=("relu", "prelu")),
    Setting("init_seed", "int", 0, "weight initialisation seed"),
)

SCHEMAS = {
    "synth": (
        Setting("out_dir", "path_out", None, "corpus directory", required=True),
        Setting("seed", "int", 0, "generator seed"),
        Setting("n_maps", "int", 24, "number of monthly maps", low=0),
        Setting("height", "int", 256, "map height in cells", low=64),
        Setting("width", "int", 512, "map width in cells", low=64),
        Setting("compound", "str", "isoprene", "compound profile", choices=COMPOUNDS),
        Setting("cell_size", "float", 0.25, "cell size in degrees", low=1e-6),
    ),
    "prepare": (
        Setting("corpus", "path_in", None, "maps.csv written by synth", required=True),
        Setting("out_dir", "path_out", None, "dataset directory", required=True),
        Setting("protocol", "str", "random", "split protocol", choices=("random", "time", "time_and_area")),
        Setting("seed", "int", 0, "split and subsampling seed"),
        Setting("alpha", "int", 4, "scale factor", low=1),
        Setting("patch_size", "int", 64, "HR patch size", low=1),
        Setting("min_nonzero_fraction", "float", 0.05, "sparsity threshold", low=0.0, high=1.0),
        Setting("region", "floats", "", "lat_min,lat_max,lon_min,lon_max for time_and_area"),
        Setting("train_size", "int", None, "subsample the training list to this many pairs", low=0),
        Setting("coarsen", "int", 1, "block-average source maps by this factor first", low=1),
        Setting("antialias", "bool", "false", "widen the kernel when synthesizing LR"),
    ),
    "fit-transform": (
        Setting("manifest", "path_in", None, "dataset manifest", required=True),
        Setting("out", "path_out", None, "QTX1 output path", required=True),
        Setting("n_quantiles", "int", 1000, "number of quantiles", low=2),
    ),
    "train": (
        Setting("manifest", "path_in", None, "dataset manifest", required=True),
        Setting("transform", "str", None, "QTX1 path or 'scaling'", required=True),
        Setting("out_dir", "path_out", None, "run directory", required=True),
        *MODEL_SETTINGS,
        Setting("iterations", "int", 50_000, "total iterations", low=0),
        Setting("lr_max", "float", 1e-4, "peak learning rate", low=0.0),
        Setting("lr_min", "float", 1e-7, "floor learning rate", low=0.0),
        Setting("batch_size", "int", 16, "mini-batch size", low=1),
        Setting("seed", "int", 0, "batch order seed"),
        Setting("validation_interval", "int", 500, "iterations between validations", low=1),
        Setting("max_validation_pairs", "int", 256, "validation pairs scored", low=1),
    ),
    "evaluate": (
        Setting("manifest", "path_in", None, "dataset manifest", required=True),
        Setting("checkpoint", "path_in", None, "EMW1 checkpoint", required=True),
        Setting("transform", "str", None, "QTX1 path or 'scaling'", required=True),
        Setting("reference", "path_in", None, "QTX1 transform defining the SSIM domain"),
        Setting("out_dir", "path_out", None, "report directory", required=True),
        Setting("split", "str", "test", "manifest split", choices=("train", "validation", "test")),
        Setting("label", "str", "D", "protocol or corpus label"),
        Setting("model_id", "str", None, "row name (default: architecture)"),
        Setting("baseline", "bool", "true", "add a bicubic row"),
    ),
    "super-resolve": (
        Setting("checkpoint", "path_in", None, "EMW1 checkpoint", required=True),
        Setting("transform", "str", None, "QTX1 path or 'scaling'", required=True),
        Setting("input", "path_in", None, "LR EMG1 grid", required=True),
        Setting("output", "path_out", None, "SR EMG1 grid", required=True),
        Setting("alpha", "int", None, "expected scale factor", choices=(2, 4)),
        Setting("heatmap", "bool", "false", "also write <output>.ppm"),
    ),
    "report": (
        Setting("tables", "str", None, "comma-separated table.csv files", required=True),
        Setting("out_dir", "path_out", None, "report directory", required=True),
        Setting("manifest", "path_in", None, "dataset manifest for example figures"),
        Setting("checkpoint", "path_in", None, "checkpoint for example figures"),
        Setting("transform", "str", None, "QTX1 path or 'scaling' for example figures"),
        Setting("n_examples", "int", 3, "example pairs to plot", low=0),
    ),
}


def _check_transform_spec(cfg, key="transform"):
    spec = cfg.get(key)
    if spec is None or spec in ("scaling", "max", "T_S"):
        return
    if not os.path.isfile(spec):
        raise ConfigError(f"{key}: {spec} is neither 'scaling' nor an existing QTX1 file", key)


def _validate_extra(command, cfg):
    if command in ("train", "evaluate", "super-resolve", "report"):
        _check_transform_spec(cfg)
    if command == "prepare" and cfg["protocol"] == "time_and_area":
        if len(cfg["region"]) != 4:
            raise ConfigError("time_and_area needs region=lat_min,lat_max,lon_min,lon_max", "region")
        try:
            Region(*cfg["region"])
        except DomainError as exc:
            raise ConfigError(str(exc), "region") from exc
    if command == "train":
        cfg["_model"] = _model_config(cfg)
        cfg["_train"] = TrainConfig(_schedule(cfg["lr_max"], cfg["lr_min"], cfg["iterations"]),
                                    cfg["batch_size"], cfg["seed"], cfg["validation_interval"],
                                    max_validation_pairs=cfg["max_validation_pairs"])
    if command == "report":
        for t in cfg["tables"].split(","):
            if not os.path.isfile(t.strip()):
                raise ConfigError(f"tables: {t.strip()} does not exist", "tables")
        figs = [cfg["manifest"], cfg["checkpoint"], cfg["transform"]]
        if any(figs) and not all(figs):
            raise ConfigError("example figures need manifest, checkpoint and transform together", "manifest")


def _schedule(lr_max, lr_min, iterations) -> ScheduleConfig:
    """Default restart pattern scaled to ``iterations``; one plain period when too short for it."""
    if iterations == 0:
        return ScheduleConfig(lr_max, lr_min, (), 0, ())
    try:
        return ScheduleConfig(lr_max=lr_max, lr_min=lr_min).scaled(iterations)
    except ConfigError as exc:
        if exc.field != "restart_iterations":
            raise
        return ScheduleConfig(lr_max, lr_min, (), iterations, ())


def _model_config(cfg) -> ModelConfig:
    return ModelConfig(cfg["architecture"], cfg["alpha"], cfg["srcnn_kernels"], cfg["srcnn_widths"],
                       cfg["n_residual_blocks"], cfg["base_width"], cfg["activation"], cfg["init_seed"])


def _public(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def cmd_synth(cfg, out):
    maps = synth_emissions(cfg["seed"], cfg["n_maps"], (cfg["height"], cfg["width"]), cfg["compound"],
                           cfg["cell_size"])
    os.makedirs(os.path.join(cfg["out_dir"], "maps"), exist_ok=True)
    lines = [MAPS_HEADER]
    for k, g in enumerate(maps):
        rel = os.path.join("maps", f"map{k:04d}.emg")
        write_grid(g, os.path.join(cfg["out_dir"], rel))
        lines.append(f"map{k:04d}, {rel}, {g.timestamp.year}, {g.timestamp.month}, {g.compound}")
    with open(os.path.join(cfg["out_dir"], "maps.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    write_stamp(os.path.join(cfg["out_dir"], "stamp.txt"), "synth", cfg)
    print(f"wrote {len(maps)} maps to {cfg['out_dir']}", file=out)


def read_maps_index(path):
    root = os.path.dirname(os.path.abspath(path))
    ids, grids = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(",")]
            ids.append(fields[0])
            p = fields[1]
            grids.append(read_grid(p if os.path.isabs(p) else os.path.join(root, p)))
    return ids, grids


def cmd_prepare(cfg, out):
    ids, maps = read_maps_index(cfg["corpus"])
    if not maps:
        raise DomainError(f"corpus {cfg['corpus']} contains no maps")
    if cfg["coarsen"] > 1:
        maps = [coarsen(g, cfg["coarsen"]) for g in maps]
    pairs, discarded = build_pairs(maps, cfg["patch_size"], cfg["alpha"], cfg["min_nonzero_fraction"],
                                   ids, cfg["antialias"])
    print(f"retained {len(pairs)} patches, discarded {discarded}", file=out)
    if not pairs:
        raise DomainError("no patch passed the sparsity filter; the dataset would be empty")
    if cfg["protocol"] == "random":
        split = split_random(pairs, cfg["seed"])
    elif cfg["protocol"] == "time":
        split = split_time(pairs)
    else:
        split = split_time_area(pairs, Region(*cfg["region"]))
    if cfg["train_size"] is not None:
        split = subsample_to_cardinality(split, cfg["train_size"], cfg["seed"])
    manifest = write_pair_files(split, cfg["out_dir"])
    write_manifest(manifest, os.path.join(cfg["out_dir"], "manifest.csv"))
    write_stamp(os.path.join(cfg["out_dir"], "stamp.txt"), "prepare", cfg)
    print("split sizes train/validation/test: %d/%d/%d" % split.sizes(), file=out)


def cmd_fit_transform(cfg, out):
    manifest = read_manifest(cfg["manifest"])
    entries = manifest.by_split("train")
    if not entries:
        raise StateError(f"{cfg['manifest']} has no training pairs to fit on")
    hr = [read_grid(manifest.resolve(e.hr_path)) for e in entries]
    t = fit_quantile_transform(hr, cfg["n_quantiles"])
    write_qtx(t, cfg["out"])
    write_stamp(cfg["out"] + ".stamp", "fit-transform", cfg)
    print(f"fitted {t.n_quantiles} quantiles on {len(hr)} HR training patches -> {cfg['out']}", file=out)


def cmd_train(cfg, out):
    split = read_manifest(cfg["manifest"]).load_split()
    transform = load_transform(cfg["transform"])
    model = Model(cfg["_model"])
    os.makedirs(cfg["out_dir"], exist_ok=True)
    ckpt = os.path.join(cfg["out_dir"], "model.emw")
    log_path = os.path.join(cfg["out_dir"], "train.log")
    if os.path.exists(log_path):
        os.remove(log_path)
    tc = cfg["_train"]
    tc = TrainConfig(tc.schedule, tc.batch_size, tc.seed, tc.validation_interval, ckpt, log_path,
                     tc.max_validation_pairs)
    log = train(model, split, transform, tc)
    write_stamp(os.path.join(cfg["out_dir"], "stamp.txt"), "train", _public(cfg))
    best = f", best validation SSIM {log.best_val_ssim:.4f} at {log.best_iteration}" if log.best_iteration > 0 else ""
    print(f"trained {tc.schedule.total_iterations} iterations{best} -> {ckpt}", file=out)


def _reference_for(cfg, transform):
    if cfg.get("reference"):
        return load_transform(cfg["reference"])
    if isinstance(transform, QuantileTransform):
        return transform
    raise ConfigError("SSIM is scored in a quantile domain: pass reference=<QTX1> with scaling",
                      "reference")


def cmd_evaluate(cfg, out):
    manifest = read_manifest(cfg["manifest"])
    pairs = manifest.load_pairs(cfg["split"])
    if not pairs:
        raise StateError(f"{cfg['manifest']} has no {cfg['split']} pairs")
    model = load_checkpoint(cfg["checkpoint"])
    transform = load_transform(cfg["transform"])
    reference = _reference_for(cfg, transform)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    reports = [evaluate_pairs(model, transform, pairs, reference, cfg["label"], cfg["model_id"])]
    if cfg["baseline"]:
        reports.append(evaluate_pairs(None, None, pairs, reference, cfg["label"]))
    write_table(reports, os.path.join(cfg["out_dir"], "table.csv"))
    for r in reports:
        write_details(r, os.path.join(cfg["out_dir"], f"details_{r.model_id}.csv"))
    write_stamp(os.path.join(cfg["out_dir"], "stamp.txt"), "evaluate", cfg)
    for line in table_lines(reports):
        print(line, file=out)


def cmd_super_resolve(cfg, out):
    model = load_checkpoint(cfg["checkpoint"])
    transform = load_transform(cfg["transform"])
    lr = read_grid(cfg["input"])
    sr = super_resolve(model, transform, lr, cfg["alpha"])
    write_grid(sr, cfg["output"])
    if cfg["heatmap"]:
        render_heatmap(sr, cfg["output"] + ".ppm")
    write_stamp(cfg["output"] + ".stamp", "super-resolve", cfg)
    print(f"{lr.height}x{lr.width} -> {sr.height}x{sr.width}: {cfg['output']}", file=out)


def cmd_report(cfg, out):
    from .plotting import plot_histograms, plot_ssim_bars, plot_triptych

    rows = []
    for t in cfg["tables"].split(","):
        rows.extend(read_table(t.strip()))
    os.makedirs(cfg["out_dir"], exist_ok=True)
    keys = ["label", "model", "n_pairs", "mean_ssim", "mean_nmse_db"]
    lines = [",".join(keys)] + [",".join(r[k] for k in keys) for r in rows]
    with open(os.path.join(cfg["out_dir"], "report.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    plot_ssim_bars(rows, os.path.join(cfg["out_dir"], "ssim.png"))
    if cfg["manifest"] and cfg["n_examples"]:
        manifest = read_manifest(cfg["manifest"])
        pairs = manifest.load_pairs("test")[:cfg["n_examples"]]
        model = load_checkpoint(cfg["checkpoint"])
        transform = load_transform(cfg["transform"])
        for p in pairs:
            sr = super_resolve(model, transform, p.lr)
            base = bicubic_baseline(p.lr, p.alpha)
            stem = os.path.join(cfg["out_dir"], p.pair_id)
            plot_triptych(p.hr.values, p.lr.values, sr.values, stem + "_triptych.png", p.pair_id)
            plot_histograms(stem + "_hist.png", HR=p.hr.values, SR=sr.values, bicubic=base.values)
            render_heatmap(sr, stem + "_sr.ppm")
    write_stamp(os.path.join(cfg["out_dir"], "stamp.txt"), "report", cfg)
    for line in lines:
        print(line, file=out)


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "fit-transform": cmd_fit_transform,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "super-resolve": cmd_super_resolve,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emisr", description="Super-resolution of emission maps.")
    parser.add_argument("--version", action="version", version=f"emisr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", "").replace("_", " "))
        p.add_argument("--config", help="key=value settings file; flags override it")
        for s in schema:
            default = "" if s.default is None else f" (default: {s.default})"
            p.add_argument("--" + s.name.replace("_", "-"), dest=s.name, default=None,
                           help=s.help + default)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve_settings(SCHEMAS[command], file_values, vars(args))
        _validate_extra(command, cfg)
    except ConfigError as exc:
        print(f"emisr {command}: config error ({exc.field}): {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[command](cfg, out)
    except ConfigError as exc:
        print(f"emisr {command}: config error ({exc.field}): {exc}", file=sys.stderr)
        return 2
    except EmisrError as exc:
        print(f"emisr {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
