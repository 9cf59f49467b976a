"""Forecast verification: persistence baseline, denormalized MSE, thresholded
rain/no-rain classification metrics, and report emission (JSON + CSV tables +
a horizon-vs-MSE chart).

All metrics pool pixels over every sample of the split (micro-averaging).
Precision and recall with a zero denominator are reported as explicit nulls
next to the raw confusion counts, never coerced to 0 or 1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from .core_unet import CoreUNet
from .dataset import TEST, DatasetManifest, SampleWindow, materialize, stack_windows
from .errors import ConfigError, StateError
from .grid_io import VariableSeries, write_series
from .training import MODEL_INPUTS, forward_batch
from .wf_unet import WFUNet

REPORT_COLUMNS = [
    "model", "horizon", "mse", "accuracy", "precision", "recall",
    "tp", "fp", "tn", "fn", "n_samples",
]


@dataclass(frozen=True)
class EvalConfig:
    binarize_threshold: float = 0.0047  # in normalized units
    horizons: tuple[int, ...] = (1,)
    batch_size: int = 8

    def __post_init__(self):
        if self.binarize_threshold < 0:
            raise ConfigError(
                f"binarize_threshold must be >= 0, got {self.binarize_threshold}"
            )
        if not self.horizons:
            raise ConfigError("horizons must be non-empty")
        for h in self.horizons:
            if h not in (1, 2, 3):
                raise ConfigError(f"horizons must lie in {{1,2,3}}, got {h}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def persistence_forecast(window: SampleWindow) -> np.ndarray:
    """Last observed precipitation frame, carried forward unchanged (any horizon)."""
    return window.inputs["tp"][-1]


def evaluate_mse(outputs: np.ndarray, targets: np.ndarray, norm_max: float | None) -> float:
    """Mean squared error over all pixels and samples, in denormalized units."""
    if norm_max is None:
        raise StateError("evaluate_mse needs the normalization statistic to undo")
    outputs = np.asarray(outputs, dtype=np.float64) * norm_max
    targets = np.asarray(targets, dtype=np.float64) * norm_max
    if outputs.shape != targets.shape:
        raise ConfigError(f"shape mismatch {outputs.shape} vs {targets.shape}")
    return float(np.mean((outputs - targets) ** 2))


def binarize(frame: np.ndarray, threshold: float) -> np.ndarray:
    """Rain mask: 1 where the value is equal to or above the threshold."""
    return np.asarray(frame) >= threshold


def classification_metrics(pred_mask: np.ndarray, target_mask: np.ndarray) -> dict:
    """Micro-averaged accuracy/precision/recall with raw confusion counts.

    Positive class is rain. A zero denominator leaves the metric as None.
    """
    pred_mask = np.asarray(pred_mask, dtype=bool)
    target_mask = np.asarray(target_mask, dtype=bool)
    if pred_mask.shape != target_mask.shape:
        raise ConfigError(f"mask shape mismatch {pred_mask.shape} vs {target_mask.shape}")
    tp = int(np.count_nonzero(pred_mask & target_mask))
    fp = int(np.count_nonzero(pred_mask & ~target_mask))
    fn = int(np.count_nonzero(~pred_mask & target_mask))
    tn = int(np.count_nonzero(~pred_mask & ~target_mask))
    total = tp + fp + tn + fn
    return {
        "accuracy": (tp + tn) / total,
        "precision": tp / (tp + fp) if tp + fp > 0 else None,
        "recall": tp / (tp + fn) if tp + fn > 0 else None,
        "tp": tp,
        "fp": fp,
        "tn": tn,
        "fn": fn,
    }


def compute_threshold(tp_series: VariableSeries) -> float:
    """Mean of all normalized training precipitation values — the mean-rainfall
    binarization threshold rederived for any dataset."""
    if tp_series.norm_max is None:
        raise StateError("threshold is defined on normalized precipitation")
    return float(np.mean(tp_series.values, dtype=np.float64))


def predict_frames(
    model: torch.nn.Module, inputs: dict[str, np.ndarray], batch_size: int = 8
) -> np.ndarray:
    """Run a trained model over stacked inputs, returning (N, H, W) predictions."""
    model_type = model_type_of(model)
    variables = MODEL_INPUTS[model_type]
    x = {v: torch.as_tensor(np.asarray(inputs[v], dtype=np.float32)) for v in variables}
    n = x["tp"].shape[0]
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, n, batch_size):
            batch = {v: x[v][i : i + batch_size] for v in variables}
            out.append(forward_batch(model, model_type, batch).numpy())
    return np.concatenate(out, axis=0)


def model_type_of(model: torch.nn.Module) -> str:
    if isinstance(model, WFUNet):
        return "wf-unet"
    if isinstance(model, CoreUNet):
        return "core-unet"
    raise ConfigError(f"cannot evaluate a {type(model).__name__}")


def build_report(
    models: dict,
    manifest: DatasetManifest,
    series_by_var: dict[str, VariableSeries],
    config: EvalConfig,
    out_dir: str | Path,
    split: str = TEST,
) -> list[dict]:
    """Evaluate every model (plus persistence) at every horizon on one split.

    ``models`` maps a display name to a module, to None (persistence), or to a
    loader called with the horizon (for runs with one checkpoint per horizon).
    Emits report.json (list of rows), metrics.csv (same table), a per-horizon
    MSE table, an average-over-horizons table, and an SVG line chart. Returns
    the rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    norm_max = series_by_var["tp"].norm_max
    entries = dict(models)
    if "persistence" not in entries:
        entries = {"persistence": None, **entries}

    rows = []
    for h in config.horizons:
        windows = materialize(manifest, series_by_var, split, horizon=h)
        if not windows:
            raise ConfigError(f"split '{split}' has no windows to evaluate")
        inputs, targets = stack_windows(windows)
        target_masks = binarize(targets, config.binarize_threshold)
        for name, entry in entries.items():
            if entry is None:
                preds = np.stack([persistence_forecast(w) for w in windows])
            else:
                model = entry if isinstance(entry, torch.nn.Module) else entry(h)
                preds = predict_frames(model, inputs, config.batch_size)
            scores = classification_metrics(
                binarize(preds, config.binarize_threshold), target_masks
            )
            rows.append(
                {
                    "model": name,
                    "horizon": h,
                    "mse": evaluate_mse(preds, targets, norm_max),
                    "accuracy": scores["accuracy"],
                    "precision": scores["precision"],
                    "recall": scores["recall"],
                    "tp": scores["tp"],
                    "fp": scores["fp"],
                    "tn": scores["tn"],
                    "fn": scores["fn"],
                    "n_samples": len(windows),
                }
            )

    with open(out_dir / "report.json", "w") as f:
        json.dump(rows, f, indent=2)
        f.write("\n")
    with open(out_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    model_names = list(entries)
    _write_mse_tables(rows, model_names, list(config.horizons), out_dir)
    _plot_mse(rows, model_names, list(config.horizons), out_dir / "mse_by_horizon.svg")
    return rows


def _mse_of(rows: list[dict], model: str, horizon: int) -> float:
    for row in rows:
        if row["model"] == model and row["horizon"] == horizon:
            return row["mse"]
    raise KeyError((model, horizon))


def _write_mse_tables(rows, model_names, horizons, out_dir: Path) -> None:
    with open(out_dir / "mse_by_horizon.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["horizon", *model_names])
        for h in horizons:
            writer.writerow([h, *(_mse_of(rows, m, h) for m in model_names)])
    with open(out_dir / "average_mse.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["model", "average_mse"])
        for m in model_names:
            avg = sum(_mse_of(rows, m, h) for h in horizons) / len(horizons)
            writer.writerow([m, avg])


def _plot_mse(rows, model_names, horizons, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for m in model_names:
        ax.plot(horizons, [_mse_of(rows, m, h) for h in horizons], marker="o", label=m)
    ax.set_xlabel("horizon (hours ahead)")
    ax.set_ylabel("denormalized MSE")
    ax.set_xticks(horizons)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def export_stream_maps(
    model: WFUNet,
    windows: list[SampleWindow],
    out_dir: str | Path,
    step_hours: int = 1,
    batch_size: int = 8,
) -> tuple[Path, Path]:
    """Write each stream's pre-fusion output frames for the given samples as
    two RGS series (stream_precip.rgs, stream_wind.rgs)."""
    if not isinstance(model, WFUNet):
        raise ConfigError("stream maps exist only for the two-stream model")
    if not windows:
        raise ConfigError("no samples to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs, _ = stack_windows(windows)
    x_tp = torch.as_tensor(inputs["tp"])
    x_ws = torch.as_tensor(inputs["ws"])
    model.eval()
    p_maps, w_maps = [], []
    with torch.no_grad():
        for i in range(0, x_tp.shape[0], batch_size):
            p, w = model.stream_outputs(x_tp[i : i + batch_size], x_ws[i : i + batch_size])
            p_maps.append(p.numpy())
            w_maps.append(w.numpy())
    paths = []
    for name, maps in (("stream_precip", p_maps), ("stream_wind", w_maps)):
        series = VariableSeries(
            variable_name=name,
            values=np.concatenate(maps, axis=0),
            start_time=windows[0].anchor_time,
            step_hours=step_hours,
        )
        path = out_dir / f"{name}.rgs"
        write_series(series, path)
        paths.append(path)
    return paths[0], paths[1]
