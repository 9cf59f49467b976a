"""Model checkpoints: a directory holding ``meta.json`` (model type, config,
tensor table) and ``params.bin`` (every state-dict tensor as little-endian
float32, concatenated in state-dict order).

Writes are atomic and ordered params-first, meta-last, so the presence of a
readable meta.json implies the parameter payload it describes is complete.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .core_unet import CoreUNet, CoreUNetConfig
from .errors import CheckpointError, ConfigError
from .wf_unet import WFUNet, WFUNetConfig

MODEL_TYPES = ("core-unet", "wf-unet")
META_NAME = "meta.json"
PARAMS_NAME = "params.bin"


def _config_to_doc(model_type: str, config) -> dict:
    if model_type == "core-unet":
        return asdict(config)
    return {
        "stream_config": asdict(config.stream_config),
        "fusion_kernel": list(config.fusion_kernel),
    }


def _core_from_doc(doc: dict) -> CoreUNetConfig:
    doc = dict(doc)
    doc["spatial_size"] = tuple(doc["spatial_size"])
    return CoreUNetConfig(**doc)


def build_model(model_type: str, config) -> torch.nn.Module:
    if model_type == "core-unet":
        return CoreUNet(config)
    if model_type == "wf-unet":
        return WFUNet(config)
    raise ConfigError(f"unknown model type '{model_type}', expected one of {MODEL_TYPES}")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def save_checkpoint(
    model: torch.nn.Module,
    model_type: str,
    config,
    directory: str | Path,
    extra: dict | None = None,
) -> None:
    if model_type not in MODEL_TYPES:
        raise ConfigError(f"unknown model type '{model_type}', expected one of {MODEL_TYPES}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    state = model.state_dict()
    chunks = []
    tensors = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        chunks.append(arr.tobytes(order="C"))
        tensors.append([name, list(tensor.shape)])
    _atomic_write(directory / PARAMS_NAME, b"".join(chunks))

    meta = {
        "model_type": model_type,
        "config": _config_to_doc(model_type, config),
        "format": "f32-le",
        "tensors": tensors,
        "extra": extra or {},
    }
    _atomic_write(
        directory / META_NAME, (json.dumps(meta, indent=2) + "\n").encode()
    )


def load_checkpoint(
    directory: str | Path, expected_type: str | None = None
) -> tuple[torch.nn.Module, dict]:
    """Rebuild the model a checkpoint directory describes. Returns (model, meta)."""
    directory = Path(directory)
    meta_path = directory / META_NAME
    if not meta_path.exists():
        raise CheckpointError(f"{directory}: no {META_NAME} found")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{meta_path}: unreadable metadata ({e})") from e

    model_type = meta.get("model_type")
    if model_type not in MODEL_TYPES:
        raise CheckpointError(f"{meta_path}: unknown model type {model_type!r}")
    if expected_type is not None and model_type != expected_type:
        raise CheckpointError(
            f"{directory}: holds a {model_type}, but a {expected_type} was requested"
        )
    if model_type == "core-unet":
        config = _core_from_doc(meta["config"])
    else:
        config = WFUNetConfig(
            stream_config=_core_from_doc(meta["config"]["stream_config"]),
            fusion_kernel=tuple(meta["config"]["fusion_kernel"]),
        )
    model = build_model(model_type, config)

    params_path = directory / PARAMS_NAME
    if not params_path.exists():
        raise CheckpointError(f"{directory}: no {PARAMS_NAME} found")
    raw = params_path.read_bytes()

    state = model.state_dict()
    table = meta.get("tensors", [])
    if [n for n, _ in table] != list(state):
        raise CheckpointError(
            f"{directory}: tensor table does not match a {model_type} with this config"
        )
    offset = 0
    new_state = {}
    for (name, shape), (state_name, tensor) in zip(table, state.items()):
        if list(tensor.shape) != list(shape):
            raise CheckpointError(
                f"{directory}: tensor '{name}' has shape {shape}, model expects "
                f"{list(tensor.shape)}"
            )
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        if offset + nbytes > len(raw):
            raise CheckpointError(
                f"{params_path}: truncated at byte {len(raw)} inside tensor '{name}'"
            )
        arr = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        if not np.isfinite(arr).all():
            raise CheckpointError(f"{params_path}: non-finite values in tensor '{name}'")
        new_state[name] = torch.from_numpy(arr.copy()).to(tensor.dtype)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(
            f"{params_path}: {len(raw) - offset} trailing bytes after byte {offset}"
        )
    model.load_state_dict(new_state)
    model.eval()
    return model, meta
