"""Command-line entry point wiring the pipeline:

    synth -> build -> train -> eval -> predict

Every command reads a JSON config file (``--config``) merged over built-in
defaults, with a few flags overriding config keys. ``--out`` is the run
directory; commands read each other's outputs from conventional subpaths
(raw/, data/, models/, report/) so a full experiment is
``synth; build; train; eval`` against one directory.

Exit codes: 0 success, 2 usage/config error, 3 data/format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import grid_io
from .checkpoint import load_checkpoint, save_checkpoint
from .core_unet import CoreUNetConfig
from .errors import (
    ConfigError,
    FusioncastError,
    NumericalError,
)
from .evaluation import (
    EvalConfig,
    build_report,
    export_stream_maps,
    model_type_of,
    predict_frames,
)
from .grid_io import CropSpec, centered_crop, read_series, write_series
from .synthetic import SyntheticConfig, generate
from .training import MODEL_INPUTS, TrainConfig, train
from .wf_unet import WFUNetConfig

DEFAULT_CONFIG = {
    "synthetic": {
        "grid": [32, 32],
        "sequence_length": 64,
        "n_sequences": 1,
        "n_blobs": 3,
        "blob_amplitude": [0.5, 1.5],
        "blob_sigma": [2.0, 4.0],
        "wind_velocity": [[-2.0, 2.0], [-2.0, 2.0]],
        "noise_std": 0.0,
        "seed": 0,
        "start_time": "2020-01-01T00:00:00",
        "step_hours": 1,
    },
    "build": {
        "raw_dir": None,  # defaults to <out>/raw
        "crop": None,  # null | "centered" | {top, left, out_height, out_width}
        "crop_size": [96, 96],  # used when crop == "centered"
        "window": {"lag": 12, "horizon": 1},
        "filter": {"min_rain_fraction": 0.0, "rain_pixel_threshold": 0.0},
        "train_years": [2020],
        "test_year": 2021,
        "validation_fraction": 0.1,
        "validation_seed": 0,
    },
    "model": {
        "type": "wf-unet",
        "levels": 5,
        "base_channels": 64,
        "input_lag": 12,
        "spatial_size": [96, 96],
        "dropout_rate": 0.5,
        "kernel_size": 3,
        "channel_growth": 2,
        "upsample_mode": "nearest",
    },
    "train": {
        "learning_rate": 1e-4,
        "batch_size": 2,
        "max_epochs": 200,
        "early_stop_patience": 15,
        "lr_halving_patience": 4,
        "lr_factor": 0.5,
        "seed": 0,
        "horizon": 1,
    },
    "eval": {
        "binarize_threshold": 0.0047,
        "horizons": [1],
        "batch_size": 8,
        "models": {},  # name -> checkpoint path, may contain "{h}"
        "stream_samples": [],  # anchor indices for stream-map export
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{path}{key}'")
        if isinstance(base[key], dict) and isinstance(value, dict) and key != "models":
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    try:
        user = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from e
    if not isinstance(user, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return _merge(DEFAULT_CONFIG, user)


def _pair(value, name) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{name} must be a 2-element list, got {value!r}")
    return tuple(value)


def _synthetic_config(section: dict, seed: int | None) -> SyntheticConfig:
    if section.get("grid") is None:
        raise ConfigError("synthetic.grid is required")
    vx, vy = _pair(section["wind_velocity"], "synthetic.wind_velocity")
    return SyntheticConfig(
        grid=tuple(int(x) for x in _pair(section["grid"], "synthetic.grid")),
        sequence_length=int(section["sequence_length"]),
        n_sequences=int(section["n_sequences"]),
        n_blobs=int(section["n_blobs"]),
        blob_amplitude=_pair(section["blob_amplitude"], "synthetic.blob_amplitude"),
        blob_sigma=_pair(section["blob_sigma"], "synthetic.blob_sigma"),
        wind_velocity=(_pair(vx, "vx"), _pair(vy, "vy")),
        noise_std=float(section["noise_std"]),
        seed=int(section["seed"] if seed is None else seed),
        start_time=datetime.fromisoformat(section["start_time"]),
        step_hours=int(section["step_hours"]),
    )


def _model_config(section: dict):
    model_type = section.get("type")
    if model_type not in MODEL_INPUTS:
        raise ConfigError(
            f"model.type must be one of {sorted(MODEL_INPUTS)}, got {model_type!r}"
        )
    core = CoreUNetConfig(
        levels=int(section["levels"]),
        base_channels=int(section["base_channels"]),
        input_lag=int(section["input_lag"]),
        spatial_size=tuple(int(x) for x in _pair(section["spatial_size"], "model.spatial_size")),
        dropout_rate=float(section["dropout_rate"]),
        kernel_size=int(section["kernel_size"]),
        channel_growth=int(section["channel_growth"]),
        upsample_mode=str(section["upsample_mode"]),
    )
    if model_type == "core-unet":
        return model_type, core
    return model_type, WFUNetConfig(stream_config=core)


def _train_config(section: dict, seed: int | None, horizon: int | None) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(section["learning_rate"]),
        batch_size=int(section["batch_size"]),
        max_epochs=int(section["max_epochs"]),
        early_stop_patience=int(section["early_stop_patience"]),
        lr_halving_patience=int(section["lr_halving_patience"]),
        lr_factor=float(section["lr_factor"]),
        seed=int(section["seed"] if seed is None else seed),
        horizon=int(section["horizon"] if horizon is None else horizon),
    )


def _load_data(out: Path):
    manifest_path = out / "data" / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no dataset manifest at {manifest_path}; run `build` first")
    manifest = ds.DatasetManifest.load(manifest_path)
    series = ds.load_sources(manifest, manifest_path.parent)
    return manifest, series


def cmd_synth(args, config) -> int:
    cfg = _synthetic_config(config["synthetic"], args.seed)
    if args.length is not None:
        cfg = replace(cfg, sequence_length=int(args.length))
    raw_dir = Path(args.out) / "raw"
    raw_dir.mkdir(parents=True, exist_ok=True)
    for series in generate(cfg):
        path = raw_dir / f"{series.variable_name}.rgs"
        write_series(series, path)
        print(f"wrote {path} ({series.n_frames} frames of {series.height}x{series.width})")
    return 0


def _crop_spec(section: dict, height: int, width: int) -> CropSpec | None:
    crop_cfg = section["crop"]
    if crop_cfg is None:
        return None
    if crop_cfg == "centered":
        oh, ow = _pair(section["crop_size"], "build.crop_size")
        return centered_crop(height, width, int(oh), int(ow))
    if isinstance(crop_cfg, dict):
        return CropSpec(**{k: int(v) for k, v in crop_cfg.items()})
    raise ConfigError(f"build.crop must be null, \"centered\", or an object, got {crop_cfg!r}")


def cmd_build(args, config) -> int:
    section = config["build"]
    out = Path(args.out)
    raw_dir = Path(section["raw_dir"]) if section["raw_dir"] else out / "raw"
    if not raw_dir.exists():
        raise ConfigError(f"raw data directory {raw_dir} not found; run `synth` first")

    tp = read_series(raw_dir / "tp.rgs")
    u = read_series(raw_dir / "u.rgs")
    v = read_series(raw_dir / "v.rgs")
    ws = grid_io.wind_speed(u, v)

    spec = _crop_spec(section, tp.height, tp.width)
    if spec is not None:
        tp = grid_io.crop(tp, spec)
        ws = grid_io.crop(ws, spec)

    window = ds.WindowSpec(**{k: int(v) for k, v in section["window"].items()})
    rule = ds.FilterRule(
        min_rain_fraction=float(section["filter"]["min_rain_fraction"]),
        rain_pixel_threshold=float(section["filter"]["rain_pixel_threshold"]),
    )
    train_years = [int(y) for y in section["train_years"]]
    test_year = int(section["test_year"])
    seed = int(section["validation_seed"] if args.seed is None else args.seed)

    # filter on raw precipitation (the rule's threshold is in raw units)
    anchors = ds.filter_targets(tp, rule, window)
    splits = ds.split_by_year(
        tp, anchors, window, train_years, test_year,
        validation_fraction=float(section["validation_fraction"]), seed=seed,
    )

    # normalization statistics come from training-year frames only
    train_mask = np.array([tp.timestamp(i).year in set(train_years) for i in range(tp.n_frames)])
    if not train_mask.any():
        raise ConfigError(f"no frames fall in training years {train_years}")
    data_dir = out / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    sources = []
    for series in (tp, ws):
        fit_slice = grid_io.VariableSeries(
            variable_name=series.variable_name,
            values=series.values[train_mask],
            start_time=series.start_time,
            step_hours=series.step_hours,
            units=series.units,
        )
        norm_max = grid_io.fit_norm_max(fit_slice)
        normalized = grid_io.normalize(series, norm_max)
        path = data_dir / f"{series.variable_name}.rgs"
        write_series(normalized, path)
        sources.append(path.name)
        print(f"wrote {path} (norm max {norm_max:g})")

    manifest = ds.DatasetManifest(
        window=window, filter_rule=rule, sources=sources,
        splits=splits, validation_seed=seed,
    )
    manifest.save(data_dir / "manifest.json")
    counts = {k: len(ix) for k, ix in splits.items()}
    print(f"wrote {data_dir / 'manifest.json'} (windows per split: {counts})")
    return 0


def cmd_train(args, config) -> int:
    out = Path(args.out)
    manifest, series = _load_data(out)
    model_section = dict(config["model"])
    if args.model is not None:
        model_section["type"] = args.model
    model_type, model_config = _model_config(model_section)
    train_config = _train_config(config["train"], args.seed, args.horizon)

    core = model_config if model_type == "core-unet" else model_config.stream_config
    shape = series["tp"].values.shape[1:]
    if core.spatial_size != shape:
        raise ConfigError(
            f"model.spatial_size {core.spatial_size} does not match data frames {shape}"
        )
    if core.input_lag != manifest.window.lag:
        raise ConfigError(
            f"model.input_lag {core.input_lag} does not match manifest lag "
            f"{manifest.window.lag}"
        )

    run_dir = out / "models" / f"{model_type}-h{train_config.horizon}"
    model, result = train(
        model_type, model_config, train_config, manifest, series, run_dir,
        resume=not args.no_resume,
    )
    ckpt_dir = run_dir / "checkpoint"
    save_checkpoint(
        model, model_type, model_config, ckpt_dir,
        extra={
            "seed": train_config.seed,
            "horizon": train_config.horizon,
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
        },
    )
    print(
        f"trained {model_type} for {result.epochs_run} epochs "
        f"({result.stop_reason}); best val loss {result.best_val_loss:.6g} "
        f"at epoch {result.best_epoch}; checkpoint at {ckpt_dir}"
    )
    return 0


def _model_loader(out: Path, path_template: str):
    def load(h: int):
        ckpt = Path(path_template.replace("{h}", str(h)))
        if not ckpt.is_absolute():
            ckpt = out / ckpt
        if not ckpt.exists():
            raise ConfigError(f"checkpoint {ckpt} not found")
        model, _ = load_checkpoint(ckpt)
        return model

    return load


def cmd_eval(args, config) -> int:
    out = Path(args.out)
    manifest, series = _load_data(out)
    section = config["eval"]
    horizons = section["horizons"]
    if args.horizons is not None:
        horizons = [int(h) for h in args.horizons.split(",") if h]
    eval_config = EvalConfig(
        binarize_threshold=float(section["binarize_threshold"]),
        horizons=tuple(int(h) for h in horizons),
        batch_size=int(section["batch_size"]),
    )
    models = {
        name: _model_loader(out, path) for name, path in section["models"].items()
    }
    report_dir = out / "report"
    rows = build_report(models, manifest, series, eval_config, report_dir)
    for row in rows:
        print(
            f"{row['model']:>12s}  h={row['horizon']}  mse={row['mse']:.6g}  "
            f"acc={_fmt(row['accuracy'])}  prec={_fmt(row['precision'])}  "
            f"rec={_fmt(row['recall'])}"
        )

    samples = [int(i) for i in section["stream_samples"]]
    if samples:
        _export_streams(out, manifest, series, section, eval_config, samples, report_dir)
    print(f"report written to {report_dir}")
    return 0


def _export_streams(out, manifest, series, section, eval_config, samples, report_dir):
    wf_entries = {}
    for name, path in section["models"].items():
        model = _model_loader(out, path)(eval_config.horizons[0])
        if model_type_of(model) == "wf-unet":
            wf_entries[name] = model
    if not wf_entries:
        raise ConfigError("stream_samples given but no two-stream model in eval.models")
    windows = ds.materialize(
        manifest, series, ds.TEST, horizon=eval_config.horizons[0]
    )
    by_anchor = {w.anchor_index: w for w in windows}
    missing = [i for i in samples if i not in by_anchor]
    if missing:
        raise ConfigError(f"stream_samples anchors {missing} not in the test split")
    picked = [by_anchor[i] for i in samples]
    name, model = next(iter(wf_entries.items()))
    p_path, w_path = export_stream_maps(
        model, picked, report_dir, step_hours=series["tp"].step_hours
    )
    print(f"stream maps for '{name}' written to {p_path} and {w_path}")


def _fmt(value) -> str:
    return "null" if value is None else f"{value:.4f}"


def cmd_predict(args, config) -> int:
    out = Path(args.out)
    manifest, series = _load_data(out)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_absolute():
        ckpt = out / ckpt
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} not found")
    model, meta = load_checkpoint(ckpt)
    variables = MODEL_INPUTS[meta["model_type"]]

    lag = manifest.window.lag
    anchor = int(args.anchor)
    tp = series["tp"]
    if anchor < lag - 1 or anchor >= tp.n_frames:
        raise ConfigError(
            f"anchor {anchor} outside [{lag - 1}, {tp.n_frames - 1}] for lag {lag}"
        )
    horizon = int(args.horizon) if args.horizon is not None else manifest.window.horizon
    inputs = {
        v: series[v].values[anchor - lag + 1 : anchor + 1][None].astype(np.float32)
        for v in variables
    }
    frame = predict_frames(model, inputs, batch_size=1)[0]

    nowcast = grid_io.VariableSeries(
        variable_name="tp",
        values=frame[None],
        start_time=tp.timestamp(anchor + horizon),
        step_hours=tp.step_hours,
        units=tp.units,
        norm_max=tp.norm_max,
    )
    path = Path(args.out_file) if args.out_file else out / "nowcast.rgs"
    write_series(nowcast, path)
    print(f"wrote {path} (nowcast for {nowcast.start_time.isoformat()})")
    return 0


def _common_flags(defaults: bool) -> argparse.ArgumentParser:
    # The subcommand parsers must not re-apply defaults, or values given before
    # the subcommand would be clobbered; they declare the same flags with
    # SUPPRESS so only explicit values propagate.
    d = {} if defaults else {"default": argparse.SUPPRESS}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file merged over defaults", **d)
    common.add_argument("--seed", type=int, help="override the run seed", **d)
    if defaults:
        common.add_argument("--out", default="runs/default", help="run directory")
    else:
        common.add_argument("--out", help="run directory", default=argparse.SUPPRESS)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusioncast",
        description="Precipitation nowcasting: synthesize, build, train, evaluate, predict.",
        parents=[_common_flags(defaults=True)],
    )
    common = _common_flags(defaults=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic advection data")
    p.add_argument("--length", type=int, help="frames per sequence segment")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", parents=[common], help="derive, crop, normalize, split")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", parents=[common], help="train a model on the built dataset")
    p.add_argument("--model", choices=sorted(MODEL_INPUTS), help="override model.type")
    p.add_argument("--horizon", type=int, help="override train.horizon")
    p.add_argument("--no-resume", action="store_true", help="ignore an existing run state")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate checkpoints + persistence")
    p.add_argument("--horizons", help="comma-separated horizons, e.g. 1,2,3")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="write one nowcast frame")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--anchor", required=True, type=int, help="anchor frame index")
    p.add_argument("--horizon", type=int, help="lead time label for the output")
    p.add_argument("--out-file", help="output path (default <out>/nowcast.rgs)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except FusioncastError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
