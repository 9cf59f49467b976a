"""Training loop: Adam on mean-squared error with plateau-driven learning-rate
halving and early stopping, both keyed to strict validation-loss improvement.

The loop is deterministic and resumable: epoch k always draws its shuffle and
dropout masks from seeds derived from (run seed, k), and the full run state is
rewritten atomically after every epoch, so a killed run continues bit-for-bit
where it stopped.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core_unet import init_parameters
from .checkpoint import build_model
from .dataset import TRAIN, VAL, DatasetManifest, materialize, stack_windows
from .errors import ConfigError, NumericalError

MODEL_INPUTS = {"core-unet": ("tp",), "wf-unet": ("tp", "ws")}
STATE_NAME = "train_state.pt"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 2
    max_epochs: int = 200
    early_stop_patience: int = 15
    lr_halving_patience: int = 4
    lr_factor: float = 0.5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    horizon: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.early_stop_patience < 1 or self.lr_halving_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if not 0.0 < self.lr_factor < 1.0:
            raise ConfigError(f"lr_factor must be in (0, 1), got {self.lr_factor}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")


class PlateauPolicy:
    """Tracks the best validation loss seen so far.

    An epoch improves only if its loss is strictly lower than the best. Every
    run of ``lr_patience`` consecutive non-improving epochs multiplies the rate
    by ``lr_factor``; ``early_stop_patience`` consecutive non-improving epochs
    stop the run. Improvement resets both counters; a rate change resets only
    the rate counter, so the stop counter keeps accumulating across rate
    changes.
    """

    def __init__(self, lr: float, lr_patience: int, lr_factor: float, early_stop_patience: int):
        self.lr = lr
        self.lr_patience = lr_patience
        self.lr_factor = lr_factor
        self.early_stop_patience = early_stop_patience
        self.best: float | None = None
        self.lr_counter = 0
        self.es_counter = 0

    def observe(self, loss: float) -> dict:
        """Feed one epoch's validation loss; returns what changed."""
        if self.best is None or loss < self.best:
            self.best = float(loss)
            self.lr_counter = 0
            self.es_counter = 0
            return {"improved": True, "lr_changed": False, "stop": False}
        self.lr_counter += 1
        self.es_counter += 1
        lr_changed = False
        if self.lr_counter >= self.lr_patience:
            self.lr *= self.lr_factor
            self.lr_counter = 0
            lr_changed = True
        return {
            "improved": False,
            "lr_changed": lr_changed,
            "stop": self.es_counter >= self.early_stop_patience,
        }

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "lr_patience": self.lr_patience,
            "lr_factor": self.lr_factor,
            "early_stop_patience": self.early_stop_patience,
            "best": self.best,
            "lr_counter": self.lr_counter,
            "es_counter": self.es_counter,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PlateauPolicy":
        policy = cls(doc["lr"], doc["lr_patience"], doc["lr_factor"], doc["early_stop_patience"])
        policy.best = doc["best"]
        policy.lr_counter = doc["lr_counter"]
        policy.es_counter = doc["es_counter"]
        return policy


@dataclass
class TrainResult:
    best_val_loss: float
    best_epoch: int
    epochs_run: int
    stop_reason: str  # "early-stop" | "max-epochs"
    history: list[dict] = field(default_factory=list)


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


def forward_batch(model, model_type: str, batch: dict[str, torch.Tensor]) -> torch.Tensor:
    if model_type == "core-unet":
        return model(batch["tp"])
    return model(batch["tp"], batch["ws"])


def _as_tensors(data: tuple[dict[str, np.ndarray], np.ndarray], variables) -> tuple[dict, torch.Tensor]:
    inputs, targets = data
    missing = [v for v in variables if v not in inputs]
    if missing:
        raise ConfigError(f"training data lacks input variables {missing}")
    x = {v: torch.as_tensor(np.asarray(inputs[v], dtype=np.float32)) for v in variables}
    y = torch.as_tensor(np.asarray(targets, dtype=np.float32))
    n = y.shape[0]
    for v in variables:
        if x[v].shape[0] != n:
            raise ConfigError(f"input '{v}' has {x[v].shape[0]} samples, targets have {n}")
    return x, y


def _epoch_loss(model, model_type, x, y, variables, batch_size) -> float:
    """Dataset-mean MSE without gradient tracking."""
    model.eval()
    n = y.shape[0]
    total = 0.0
    with torch.no_grad():
        for i in range(0, n, batch_size):
            batch = {v: x[v][i : i + batch_size] for v in variables}
            pred = forward_batch(model, model_type, batch)
            total += torch.sum((pred - y[i : i + batch_size]) ** 2).item()
    return total / y.numel()


def _grad_all_finite(model) -> bool:
    for p in model.parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            return False
    return True


def _param_norm(model) -> float:
    return math.sqrt(sum(float(torch.sum(p.detach() ** 2)) for p in model.parameters()))


def _save_state(path: Path, state: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    torch.save(state, tmp)
    os.replace(tmp, path)


def fit(
    model_type: str,
    model_config,
    train_config: TrainConfig,
    train_data: tuple[dict[str, np.ndarray], np.ndarray],
    val_data: tuple[dict[str, np.ndarray], np.ndarray] | None,
    out_dir: str | Path,
    resume: bool = True,
) -> tuple[torch.nn.Module, TrainResult]:
    """Train a fresh model (or continue a stopped run found in ``out_dir``).

    Returns the model with its best-validation-epoch weights loaded. With no
    validation data the training loss drives the policy instead.
    """
    if model_type not in MODEL_INPUTS:
        raise ConfigError(f"unknown model type '{model_type}'")
    variables = MODEL_INPUTS[model_type]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state_path = out_dir / STATE_NAME

    x_train, y_train = _as_tensors(train_data, variables)
    if val_data is not None:
        x_val, y_val = _as_tensors(val_data, variables)
    n_train = y_train.shape[0]
    cfg = train_config

    model = build_model(model_type, model_config)
    init_parameters(model, cfg.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps
    )
    policy = PlateauPolicy(
        cfg.learning_rate, cfg.lr_halving_patience, cfg.lr_factor, cfg.early_stop_patience
    )
    history: list[dict] = []
    best_state = None
    best_epoch = 0
    best_val = float("inf")
    start_epoch = 1
    already_stopped = False

    if resume and state_path.exists():
        saved = torch.load(state_path, weights_only=False)
        model.load_state_dict(saved["model_state"])
        optimizer.load_state_dict(saved["optimizer_state"])
        policy = PlateauPolicy.from_dict(saved["policy"])
        history = saved["history"]
        best_state = saved["best_state"]
        best_epoch = saved["best_epoch"]
        best_val = saved["best_val"]
        start_epoch = saved["epoch"] + 1
        already_stopped = saved["stopped"]
        if saved["completed"]:
            model.load_state_dict(best_state)
            model.eval()
            return model, TrainResult(
                best_val, best_epoch, saved["epoch"], saved["stop_reason"], history
            )
        for group in optimizer.param_groups:
            group["lr"] = policy.lr

    stop_reason = "early-stop" if already_stopped else "max-epochs"
    epoch = start_epoch - 1
    remaining = [] if already_stopped else range(start_epoch, cfg.max_epochs + 1)
    for epoch in remaining:
        tick = time.monotonic()
        torch.manual_seed(cfg.seed * 1000003 + epoch)  # dropout masks
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(n_train)
        lr_used = optimizer.param_groups[0]["lr"]

        model.train()
        sse = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            batch = {v: x_train[v][idx] for v in variables}
            optimizer.zero_grad()
            pred = forward_batch(model, model_type, batch)
            loss = mse_loss(pred, y_train[idx])
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss {loss.item()} at epoch {epoch}, "
                    f"batch starting {start} (lr {lr_used:g}, "
                    f"parameter norm {_param_norm(model):g})"
                )
            loss.backward()
            if not _grad_all_finite(model):
                raise NumericalError(
                    f"non-finite gradient at epoch {epoch}, batch starting {start} "
                    f"(loss {loss.item():g}, lr {lr_used:g}, "
                    f"parameter norm {_param_norm(model):g})"
                )
            optimizer.step()
            sse += loss.item() * len(idx) * y_train[0].numel()
        train_loss = sse / y_train.numel()

        if val_data is not None:
            val_loss = _epoch_loss(model, model_type, x_val, y_val, variables, cfg.batch_size)
        else:
            val_loss = _epoch_loss(model, model_type, x_train, y_train, variables, cfg.batch_size)

        outcome = policy.observe(val_loss)
        if outcome["improved"]:
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            best_epoch = epoch
            best_val = val_loss
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "lr": lr_used,
                "improved": outcome["improved"],
                "seconds": time.monotonic() - tick,
            }
        )
        if outcome["lr_changed"]:
            for group in optimizer.param_groups:
                group["lr"] = policy.lr
        if outcome["stop"]:
            stop_reason = "early-stop"

        _save_state(
            state_path,
            {
                "epoch": epoch,
                "model_state": model.state_dict(),
                "optimizer_state": optimizer.state_dict(),
                "policy": policy.to_dict(),
                "history": history,
                "best_state": best_state,
                "best_epoch": best_epoch,
                "best_val": best_val,
                "completed": False,
                "stopped": outcome["stop"],
                "stop_reason": stop_reason,
                "seed": cfg.seed,
                "model_type": model_type,
            },
        )
        if outcome["stop"]:
            break

    model.load_state_dict(best_state)
    model.eval()
    result = TrainResult(best_val, best_epoch, epoch, stop_reason, history)
    saved = torch.load(state_path, weights_only=False)
    saved["completed"] = True
    saved["stop_reason"] = stop_reason
    _save_state(state_path, saved)
    write_history(history, out_dir)
    return model, result


def train(
    model_type: str,
    model_config,
    train_config: TrainConfig,
    manifest: DatasetManifest,
    series_by_var: dict,
    out_dir: str | Path,
    resume: bool = True,
) -> tuple[torch.nn.Module, TrainResult]:
    """Materialize the manifest's train/val splits at the configured horizon
    and fit the model on them."""
    variables = list(MODEL_INPUTS[model_type])
    train_windows = materialize(
        manifest, series_by_var, TRAIN, horizon=train_config.horizon, variables=variables
    )
    if not train_windows:
        raise ConfigError("manifest has no training windows")
    val_windows = materialize(
        manifest, series_by_var, VAL, horizon=train_config.horizon, variables=variables
    )
    train_data = stack_windows(train_windows, variables)
    val_data = stack_windows(val_windows, variables) if val_windows else None
    return fit(model_type, model_config, train_config, train_data, val_data, out_dir, resume)


def write_history(history: list[dict], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / "history.json", "w") as f:
        json.dump(history, f, indent=2)
        f.write("\n")
    with open(out_dir / "history.csv", "w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["epoch", "train_loss", "val_loss", "lr", "improved", "seconds"]
        )
        writer.writeheader()
        writer.writerows(history)
