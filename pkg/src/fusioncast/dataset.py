"""Sliding-window dataset construction on top of grid_io series.

A sample is anchored at frame index t: its inputs are the ``lag`` frames
[t-lag+1 .. t] of each input variable and its target is the precipitation frame
at t+horizon. Anchors are filtered by the rain fraction of the *target* frame,
assigned to train/test by the calendar year of the target (windows straddling a
year boundary into another split are dropped), and a seeded draw moves a
fraction of the training anchors into a validation split.

The result is recorded in a JSON manifest listing the source payload files and
the exact anchor indices per split, so a materialized dataset is reproducible
from the manifest alone.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError, ConsistencyError
from .grid_io import VariableSeries, read_series

TARGET_VARIABLE = "tp"
TRAIN, VAL, TEST = "train", "val", "test"


@dataclass(frozen=True)
class WindowSpec:
    """lag input frames predicting the frame ``horizon`` steps past the anchor."""

    lag: int = 12
    horizon: int = 1

    def __post_init__(self):
        if self.lag < 1:
            raise ConfigError(f"lag must be >= 1, got {self.lag}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")


@dataclass(frozen=True)
class FilterRule:
    """Keep an anchor when the rain fraction of its target frame is >= min_rain_fraction.

    A pixel counts as raining when its (raw-unit) value is strictly above
    ``rain_pixel_threshold``. The defaults keep every anchor.
    """

    min_rain_fraction: float = 0.0
    rain_pixel_threshold: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.min_rain_fraction <= 1.0:
            raise ConfigError(
                f"min_rain_fraction must be in [0, 1], got {self.min_rain_fraction}"
            )
        if self.rain_pixel_threshold < 0:
            raise ConfigError(
                f"rain_pixel_threshold must be >= 0, got {self.rain_pixel_threshold}"
            )


@dataclass
class SampleWindow:
    inputs: dict[str, np.ndarray]  # variable -> (lag, H, W)
    target: np.ndarray  # (H, W)
    anchor_index: int
    anchor_time: datetime


def valid_anchors(n_frames: int, window: WindowSpec) -> list[int]:
    """All t with a full input history and an in-range target: lag-1 <= t <= T-1-horizon."""
    return list(range(window.lag - 1, n_frames - window.horizon))


def rain_fraction(frame: np.ndarray, threshold: float = 0.0) -> float:
    """Fraction of pixels strictly above threshold."""
    frame = np.asarray(frame)
    return float(np.count_nonzero(frame > threshold) / frame.size)


def filter_targets(tp: VariableSeries, rule: FilterRule, spec: WindowSpec) -> list[int]:
    """Ascending anchors whose target frame passes the rain-fraction rule."""
    if tp.n_frames < spec.lag + spec.horizon:
        warnings.warn(
            f"series of {tp.n_frames} frames is shorter than lag+horizon "
            f"({spec.lag}+{spec.horizon}); no windows fit"
        )
        return []
    kept = []
    for t in valid_anchors(tp.n_frames, spec):
        if rain_fraction(tp.values[t + spec.horizon], rule.rain_pixel_threshold) >= rule.min_rain_fraction:
            kept.append(t)
    return kept


def split_by_year(
    tp: VariableSeries,
    anchors: list[int],
    window: WindowSpec,
    train_years: list[int],
    test_year: int,
    validation_fraction: float = 0.1,
    seed: int = 0,
) -> dict[str, list[int]]:
    """Partition anchors by the target frame's year; carve out seeded validation.

    An anchor goes to train/test only if every frame of its window — the lag
    inputs and the target — falls inside that split's years, so windows reaching
    across a split boundary are dropped rather than leaking frames.
    """
    frame_years = {tp.timestamp(i).year for i in range(tp.n_frames)}
    for year in [*train_years, test_year]:
        if year not in frame_years:
            raise ConfigError(f"no frames fall in requested year {year}")
    year_to_split = {y: TRAIN for y in train_years}
    if test_year in year_to_split:
        raise ConfigError(f"year {test_year} listed as both train and test")
    year_to_split[test_year] = TEST

    splits: dict[str, list[int]] = {TRAIN: [], TEST: []}
    for t in anchors:
        target_year = tp.timestamp(t + window.horizon).year
        split = year_to_split.get(target_year)
        if split is None:
            continue
        window_years = {
            tp.timestamp(i).year for i in range(t - window.lag + 1, t + window.horizon + 1)
        }
        allowed = {y for y, s in year_to_split.items() if s == split}
        if window_years <= allowed:
            splits[split].append(t)

    train, val = draw_validation(splits[TRAIN], seed, validation_fraction)
    return {TRAIN: train, VAL: val, TEST: splits[TEST]}


def draw_validation(
    train_anchors: list[int], seed: int, fraction: float = 0.1
) -> tuple[list[int], list[int]]:
    """Move floor(fraction * n) anchors from training into a validation list (seeded)."""
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"validation fraction must be in [0, 1), got {fraction}")
    n_val = math.floor(fraction * len(train_anchors))
    rng = np.random.default_rng(seed)
    pool = sorted(train_anchors)
    picked = rng.choice(len(pool), size=n_val, replace=False)
    val = sorted(pool[i] for i in picked)
    val_set = set(val)
    train = [t for t in pool if t not in val_set]
    return train, val


@dataclass
class DatasetManifest:
    """Everything needed to rebuild the sample sets: sources, rule, window, splits."""

    window: WindowSpec
    filter_rule: FilterRule
    sources: list[str]  # payload paths relative to the manifest's directory
    splits: dict[str, list[int]]
    validation_seed: int = 0

    def save(self, path: str | Path) -> None:
        doc = {
            "window": {"lag": self.window.lag, "horizon": self.window.horizon},
            "filter": {
                "min_rain_fraction": self.filter_rule.min_rain_fraction,
                "rain_pixel_threshold": self.filter_rule.rain_pixel_threshold,
            },
            "sources": list(self.sources),
            "splits": {k: [int(i) for i in v] for k, v in self.splits.items()},
            "validation_seed": self.validation_seed,
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        doc = json.loads(Path(path).read_text())
        try:
            return cls(
                window=WindowSpec(**doc["window"]),
                filter_rule=FilterRule(**doc["filter"]),
                sources=list(doc["sources"]),
                splits={k: [int(i) for i in v] for k, v in doc["splits"].items()},
                validation_seed=int(doc["validation_seed"]),
            )
        except KeyError as e:
            raise ConsistencyError(f"{path}: manifest missing key {e}") from e


def _require_aligned(a: VariableSeries, b: VariableSeries) -> None:
    if a.values.shape != b.values.shape or a.start_time != b.start_time or a.step_hours != b.step_hours:
        raise AlignmentError(
            f"sources '{a.variable_name}' and '{b.variable_name}' disagree on "
            f"shape or timestamps"
        )


def load_sources(
    manifest: DatasetManifest, base_dir: str | Path
) -> dict[str, VariableSeries]:
    """Read every source payload the manifest names, keyed by each sidecar's
    variable name; all sources must be mutually aligned and include the target."""
    base = Path(base_dir)
    series: dict[str, VariableSeries] = {}
    for rel in manifest.sources:
        path = base / rel
        if not path.exists():
            raise ConsistencyError(f"manifest source not found at {path}")
        s = read_series(path)
        if s.variable_name in series:
            raise ConsistencyError(
                f"two manifest sources claim variable '{s.variable_name}'"
            )
        series[s.variable_name] = s
    if TARGET_VARIABLE not in series:
        raise ConsistencyError(
            f"manifest sources lack the target variable '{TARGET_VARIABLE}'"
        )
    target = series[TARGET_VARIABLE]
    for s in series.values():
        _require_aligned(target, s)
    return series


def materialize(
    manifest: DatasetManifest,
    series_by_var: dict[str, VariableSeries],
    split: str,
    horizon: int | None = None,
    variables: list[str] | None = None,
) -> list[SampleWindow]:
    """Slice the source series into SampleWindows for one split, manifest order.

    ``horizon`` may shorten the lead time relative to the manifest (never
    lengthen it: the split indices were validated at the manifest's horizon).
    ``variables`` restricts which inputs are sliced; the target is always the
    precipitation frame.
    """
    h = manifest.window.horizon if horizon is None else horizon
    if h < 1 or h > manifest.window.horizon:
        raise ConfigError(
            f"horizon {h} outside [1, {manifest.window.horizon}] covered by the manifest"
        )
    if split not in manifest.splits:
        raise ConfigError(f"unknown split '{split}'; manifest has {sorted(manifest.splits)}")
    if TARGET_VARIABLE not in series_by_var:
        raise ConsistencyError(f"sources lack the target variable '{TARGET_VARIABLE}'")
    names = sorted(series_by_var) if variables is None else list(variables)
    for var in names:
        if var not in series_by_var:
            raise ConfigError(f"variable '{var}' not among the loaded sources")
    target_series = series_by_var[TARGET_VARIABLE]
    lag = manifest.window.lag
    n = target_series.n_frames
    windows = []
    for t in manifest.splits[split]:
        if t - lag + 1 < 0 or t + manifest.window.horizon >= n:
            raise ConsistencyError(
                f"split '{split}' anchor {t} out of range for {n}-frame sources"
            )
        windows.append(
            SampleWindow(
                inputs={
                    var: series_by_var[var].values[t - lag + 1 : t + 1].copy()
                    for var in names
                },
                target=target_series.values[t + h].copy(),
                anchor_index=t,
                anchor_time=target_series.timestamp(t),
            )
        )
    return windows


def stack_windows(
    windows: list[SampleWindow], variables: list[str] | None = None
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Stack a window list into arrays: inputs (N, lag, H, W) per variable,
    targets (N, H, W)."""
    if not windows:
        raise ConfigError("cannot stack an empty window list")
    names = list(windows[0].inputs) if variables is None else list(variables)
    inputs = {
        var: np.stack([w.inputs[var] for w in windows]).astype(np.float32)
        for var in names
    }
    targets = np.stack([w.target for w in windows]).astype(np.float32)
    return inputs, targets
