"""Gridded weather variables: RGS binary storage, wind-speed derivation, cropping,
max-normalization.

A "frame" throughout this package is a plain 2D numpy array (rows, cols). A
:class:`VariableSeries` stacks T frames into a (T, H, W) array together with the
metadata needed to interpret them (variable name, start time, hourly step,
normalization state).

RGS format: bytes 0-3 magic ``RGS1``; bytes 4-15 three unsigned little-endian
32-bit ints T, H, W; then T*H*W little-endian float32 values in [t][row][col]
order. Metadata lives in a JSON sidecar next to the payload, never inside it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentError,
    ConfigError,
    ConsistencyError,
    DegenerateScaleError,
    GridFormatError,
    StateError,
)

MAGIC = b"RGS1"
HEADER_SIZE = 16


@dataclass(frozen=True)
class CropSpec:
    """Sub-grid selection: rows [top, top+out_height), cols [left, left+out_width)."""

    top: int
    left: int
    out_height: int
    out_width: int

    def __post_init__(self):
        if self.top < 0 or self.left < 0:
            raise ConfigError(f"crop offsets must be non-negative, got ({self.top}, {self.left})")
        if self.out_height < 1 or self.out_width < 1:
            raise ConfigError(
                f"crop output must be at least 1x1, got {self.out_height}x{self.out_width}"
            )


def centered_crop(height: int, width: int, out_height: int = 96, out_width: int = 96) -> CropSpec:
    """Centered CropSpec; for the 105x173 source grid this is top=4, left=38."""
    if out_height > height or out_width > width:
        raise ConfigError(
            f"cannot crop {height}x{width} down to {out_height}x{out_width}"
        )
    return CropSpec((height - out_height) // 2, (width - out_width) // 2, out_height, out_width)


@dataclass(frozen=True, eq=False)
class VariableSeries:
    """Time-ordered stack of 2D fields for one variable.

    ``values`` has shape (T, H, W) and is made read-only at construction; derive
    new series with the module functions instead of mutating. ``norm_max`` absent
    means raw/denormalized data; present means every value was divided by it.
    """

    variable_name: str
    values: np.ndarray
    start_time: datetime
    step_hours: int = 1
    units: str = ""
    norm_max: float | None = None
    crop_window: CropSpec | None = None

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ConfigError(f"series values must be (T, H, W) with T >= 1, got {arr.shape}")
        if self.step_hours < 1:
            raise ConfigError(f"step_hours must be positive, got {self.step_hours}")
        if self.norm_max is not None and not self.norm_max > 0:
            raise ConfigError(f"norm_max must be positive, got {self.norm_max}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def timestamp(self, index: int) -> datetime:
        return self.start_time + timedelta(hours=index * self.step_hours)

    def frame(self, index: int) -> np.ndarray:
        return self.values[index]


def _check_finite(series: VariableSeries, context: str) -> None:
    if not np.isfinite(series.values).all():
        bad = int(np.flatnonzero(~np.isfinite(series.values).ravel())[0])
        raise ConsistencyError(f"{context}: non-finite value at flat index {bad}")


def write_series(series: VariableSeries, path: str | Path) -> None:
    """Write payload to ``path`` and metadata to the ``.json`` sidecar.

    Values are stored as little-endian float32. The series is validated before
    anything touches the filesystem.
    """
    _check_finite(series, f"refusing to write '{series.variable_name}'")
    path = Path(path)
    t, h, w = series.values.shape
    payload = series.values.astype("<f4").tobytes(order="C")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", t, h, w))
        f.write(payload)
    sidecar = {
        "variable_name": series.variable_name,
        "units": series.units,
        "start_time": series.start_time.isoformat(),
        "step_hours": series.step_hours,
        "norm_max": series.norm_max,
        "shape": [t, h, w],
        "crop": None
        if series.crop_window is None
        else {
            "top": series.crop_window.top,
            "left": series.crop_window.left,
            "out_height": series.crop_window.out_height,
            "out_width": series.crop_window.out_width,
        },
    }
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")


def read_series(path: str | Path) -> VariableSeries:
    """Read an RGS payload plus its JSON sidecar back into a VariableSeries."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise GridFormatError(f"{path}: bad magic at byte 0, expected {MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < HEADER_SIZE:
        raise GridFormatError(f"{path}: header truncated at byte {len(raw)}")
    t, h, w = struct.unpack("<III", raw[4:HEADER_SIZE])
    if t < 1 or h < 1 or w < 1:
        raise GridFormatError(f"{path}: degenerate shape ({t}, {h}, {w}) in header")
    expected = HEADER_SIZE + 4 * t * h * w
    if len(raw) < expected:
        raise GridFormatError(
            f"{path}: payload truncated at byte {len(raw)}, expected {expected} bytes"
        )
    if len(raw) > expected:
        raise GridFormatError(f"{path}: {len(raw) - expected} trailing bytes after byte {expected}")
    values = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).reshape(t, h, w)

    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise ConsistencyError(f"{path}: sidecar manifest {sidecar_path.name} not found")
    meta = json.loads(sidecar_path.read_text())
    if list(meta.get("shape", [])) != [t, h, w]:
        raise ConsistencyError(
            f"{path}: header says {(t, h, w)} but sidecar says {meta.get('shape')}"
        )
    crop_meta = meta.get("crop")
    series = VariableSeries(
        variable_name=meta["variable_name"],
        values=values,
        start_time=datetime.fromisoformat(meta["start_time"]),
        step_hours=int(meta["step_hours"]),
        units=meta.get("units", ""),
        norm_max=meta["norm_max"],
        crop_window=None if crop_meta is None else CropSpec(**crop_meta),
    )
    _check_finite(series, f"{path}")
    return series


def _check_aligned(a: VariableSeries, b: VariableSeries) -> None:
    if a.values.shape != b.values.shape:
        raise AlignmentError(f"shape mismatch: {a.values.shape} vs {b.values.shape}")
    if a.start_time != b.start_time or a.step_hours != b.step_hours:
        raise AlignmentError(
            f"timestamp mismatch: ({a.start_time}, {a.step_hours}h) vs "
            f"({b.start_time}, {b.step_hours}h)"
        )


def wind_speed(u: VariableSeries, v: VariableSeries) -> VariableSeries:
    """Elementwise wind-speed magnitude sqrt(u^2 + v^2) of the two components."""
    _check_aligned(u, v)
    if u.norm_max is not None or v.norm_max is not None:
        raise StateError("wind_speed expects denormalized u and v components")
    return VariableSeries(
        variable_name="ws",
        values=np.hypot(u.values, v.values),
        start_time=u.start_time,
        step_hours=u.step_hours,
        units=u.units,
    )


def crop(series: VariableSeries, spec: CropSpec) -> VariableSeries:
    """Replace every frame by its [top, top+out_h) x [left, left+out_w) sub-grid."""
    if spec.top + spec.out_height > series.height or spec.left + spec.out_width > series.width:
        raise ConfigError(
            f"crop {spec} out of bounds for {series.height}x{series.width} frames"
        )
    sub = series.values[
        :, spec.top : spec.top + spec.out_height, spec.left : spec.left + spec.out_width
    ].copy()
    if series.crop_window is not None:
        # nested crops compose: offsets accumulate relative to the original grid
        spec = CropSpec(
            series.crop_window.top + spec.top,
            series.crop_window.left + spec.left,
            spec.out_height,
            spec.out_width,
        )
    return replace(series, values=sub, crop_window=spec)


def fit_norm_max(training: VariableSeries) -> float:
    """Max over all pixels of all frames; the per-variable normalization statistic."""
    if training.norm_max is not None:
        raise StateError("normalization statistic must be fit on denormalized data")
    peak = float(training.values.max())
    if not peak > 0:
        raise DegenerateScaleError(
            f"'{training.variable_name}' has no positive values, cannot fit a scale"
        )
    return peak


def normalize(series: VariableSeries, norm_max: float) -> VariableSeries:
    """Divide every value by ``norm_max`` and record it. Values above the training
    max (possible on the test split) stay above 1; no clamping."""
    if series.norm_max is not None:
        raise StateError(f"'{series.variable_name}' is already normalized")
    if not norm_max > 0:
        raise ConfigError(f"norm_max must be positive, got {norm_max}")
    scaled = series.values.astype(np.float64) / norm_max
    return replace(series, values=scaled, norm_max=float(norm_max))


def denormalize(series: VariableSeries) -> VariableSeries:
    """Multiply values back by the recorded norm_max and clear it."""
    if series.norm_max is None:
        raise StateError(f"'{series.variable_name}' is not normalized")
    restored = series.values.astype(np.float64) * series.norm_max
    return replace(series, values=restored, norm_max=None)
