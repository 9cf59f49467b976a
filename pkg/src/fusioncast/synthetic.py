"""Seeded synthetic weather: Gaussian rain blobs advected by a constant wind.

Each sequence segment draws blob centers, amplitudes, widths, then one wind
vector (vx, vy) in pixels/step, then per-frame noise — in that order, so
narrowing the wind range leaves every other draw unchanged. Blobs move with the
wind and wrap around the grid edges (toroidal). The wind components are emitted
as their own spatially-constant series, which is what makes the two-stream model
worth testing on this data: the precipitation history alone under-determines the
motion once noise is added, while the wind series states it directly.

Numerics: centers and velocities are snapped to multiples of 1/64 px, so all
per-frame center arithmetic and the modular reduction onto the grid are exact in
float64. Consequence (used by tests): with an integer wind, consecutive frames
are bit-for-bit circular shifts of each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import ConfigError
from .grid_io import VariableSeries

QUANTUM = 1.0 / 64.0  # centers/velocities snap to this; keeps advection exact


@dataclass(frozen=True)
class SyntheticConfig:
    grid: tuple[int, int] = (32, 32)  # (H, W)
    sequence_length: int = 64  # frames per constant-wind segment
    n_sequences: int = 1  # segments concatenated into one series
    n_blobs: int = 3
    blob_amplitude: tuple[float, float] = (0.5, 1.5)
    blob_sigma: tuple[float, float] = (2.0, 4.0)
    wind_velocity: tuple[tuple[float, float], tuple[float, float]] = ((-2.0, 2.0), (-2.0, 2.0))
    noise_std: float = 0.0
    seed: int = 0
    start_time: datetime = field(default_factory=lambda: datetime(2020, 1, 1))
    step_hours: int = 1

    def __post_init__(self):
        h, w = self.grid
        if h < 8 or w < 8:
            raise ConfigError(f"grid must be at least 8x8, got {self.grid}")
        if self.sequence_length < 1 or self.n_sequences < 1:
            raise ConfigError("sequence_length and n_sequences must be >= 1")
        if self.n_blobs < 1:
            raise ConfigError(f"n_blobs must be >= 1, got {self.n_blobs}")
        for name, (lo, hi) in (
            ("blob_amplitude", self.blob_amplitude),
            ("blob_sigma", self.blob_sigma),
            ("vx", self.wind_velocity[0]),
            ("vy", self.wind_velocity[1]),
        ):
            if lo > hi:
                raise ConfigError(f"{name} range ({lo}, {hi}) has lo > hi")
        if self.blob_sigma[0] <= 0:
            raise ConfigError(f"blob_sigma must be positive, got {self.blob_sigma}")
        if self.blob_amplitude[0] < 0:
            raise ConfigError(f"blob_amplitude must be non-negative, got {self.blob_amplitude}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be non-negative, got {self.noise_std}")

    @property
    def n_frames(self) -> int:
        return self.sequence_length * self.n_sequences


def _quantize(x):
    return np.round(np.asarray(x, dtype=np.float64) / QUANTUM) * QUANTUM


def _wrapped_profile(coords: np.ndarray, center: float, sigma: float, period: int) -> np.ndarray:
    """1D Gaussian bump on a ring: reduce the offset mod period, sum the three
    nearest periodic images."""
    d = (coords - center) % period  # exact for 1/64-quantized centers
    inv = 1.0 / (2.0 * sigma * sigma)
    return (
        np.exp(-(d * d) * inv)
        + np.exp(-((d - period) ** 2) * inv)
        + np.exp(-((d + period) ** 2) * inv)
    )


def generate(
    config: SyntheticConfig,
) -> tuple[VariableSeries, VariableSeries, VariableSeries]:
    """Render the full series: (precip "tp", east wind "u", north wind "v")."""
    h, w = config.grid
    rng = np.random.default_rng(config.seed)
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)

    precip = np.zeros((config.n_frames, h, w), dtype=np.float64)
    u_out = np.zeros(config.n_frames, dtype=np.float64)
    v_out = np.zeros(config.n_frames, dtype=np.float64)

    for seg in range(config.n_sequences):
        cx = _quantize(rng.uniform(0.0, w, config.n_blobs))
        cy = _quantize(rng.uniform(0.0, h, config.n_blobs))
        amps = rng.uniform(*config.blob_amplitude, config.n_blobs)
        sigmas = rng.uniform(*config.blob_sigma, config.n_blobs)
        vx = float(_quantize(rng.uniform(*config.wind_velocity[0])))
        vy = float(_quantize(rng.uniform(*config.wind_velocity[1])))
        noise = rng.normal(0.0, config.noise_std, size=(config.sequence_length, h, w))

        base = seg * config.sequence_length
        for t in range(config.sequence_length):
            frame = np.zeros((h, w), dtype=np.float64)
            for b in range(config.n_blobs):
                gx = _wrapped_profile(xs, cx[b] + vx * t, sigmas[b], w)
                gy = _wrapped_profile(ys, cy[b] + vy * t, sigmas[b], h)
                frame += amps[b] * np.outer(gy, gx)
            precip[base + t] = np.clip(frame + noise[t], 0.0, None)
        u_out[base : base + config.sequence_length] = vx
        v_out[base : base + config.sequence_length] = vy

    def series(name: str, values: np.ndarray, units: str) -> VariableSeries:
        return VariableSeries(
            variable_name=name,
            values=values.astype(np.float32),
            start_time=config.start_time,
            step_hours=config.step_hours,
            units=units,
        )

    wind_frames_u = np.broadcast_to(u_out[:, None, None], (config.n_frames, h, w)).copy()
    wind_frames_v = np.broadcast_to(v_out[:, None, None], (config.n_frames, h, w)).copy()
    return (
        series("tp", precip, "mm"),
        series("u", wind_frames_u, "px/h"),
        series("v", wind_frames_v, "px/h"),
    )
