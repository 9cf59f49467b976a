"""Desk-scale two-stream vs single-stream comparison on wind-driven advection.

Generates a synthetic series whose motion is set by the emitted wind, builds
year-split train/val/test windows, trains the precipitation-only model and the
fused model on identical data across several seeds, and reports held-out
denormalized MSE against the persistence baseline.

    python3 scripts/desk_fusion_experiment.py --out runs/fusion --epochs 8
"""

from __future__ import annotations

import argparse
import csv
import json
import time
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from fusioncast.core_unet import CoreUNetConfig
from fusioncast.dataset import FilterRule, WindowSpec, filter_targets, split_by_year
from fusioncast.evaluation import evaluate_mse, predict_frames
from fusioncast.grid_io import wind_speed
from fusioncast.synthetic import SyntheticConfig, generate
from fusioncast.training import TrainConfig, fit
from fusioncast.wf_unet import WFUNetConfig


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/fusion", help="artifact directory")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--grid", type=int, default=32, help="square grid size")
    p.add_argument("--lag", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--n-train", type=int, default=1500)
    p.add_argument("--n-test", type=int, default=300)
    return p.parse_args()


def build_windows(args):
    """Synthesize two 'years' of frames and cut year-split windows."""
    window = WindowSpec(lag=args.lag, horizon=1)
    # frames per "year" with headroom for the validation carve-out and the
    # boundary windows the year split drops
    margin = 2 * args.lag + 8
    train_frames = int(args.n_train * 1.12) + margin
    test_frames = args.n_test + margin
    total = int(np.ceil((train_frames + test_frames) / 24)) * 24
    data = SyntheticConfig(
        grid=(args.grid, args.grid),
        sequence_length=24,
        n_sequences=total // 24,
        n_blobs=3,
        wind_velocity=((1.0, 3.0), (0.0, 0.0)),
        noise_std=args.noise,
        seed=11,
        # place the year boundary so both splits are big enough
        start_time=datetime(2021, 1, 1) - timedelta(hours=total - test_frames),
    )
    tp, u, v = generate(data)
    ws = wind_speed(u, v)

    anchors = filter_targets(tp, FilterRule(), window)
    splits = split_by_year(tp, anchors, window, [2020], 2021, validation_fraction=0.1, seed=0)
    if len(splits["train"]) < args.n_train or len(splits["test"]) < args.n_test:
        raise SystemExit(
            f"splits too small: {len(splits['train'])} train / {len(splits['test'])} test; "
            "increase frames or lower --n-train/--n-test"
        )
    train_a = splits["train"][: args.n_train]
    test_a = splits["test"][: args.n_test]

    n_2020 = sum(1 for i in range(tp.n_frames) if tp.timestamp(i).year == 2020)
    norm_tp = float(tp.values[:n_2020].max())
    norm_ws = float(ws.values[:n_2020].max())
    tp_n = (tp.values.astype(np.float64) / norm_tp).astype(np.float32)
    ws_n = (ws.values.astype(np.float64) / norm_ws).astype(np.float32)

    def pack(anchor_list):
        x = {
            "tp": np.stack([tp_n[t - args.lag + 1 : t + 1] for t in anchor_list]),
            "ws": np.stack([ws_n[t - args.lag + 1 : t + 1] for t in anchor_list]),
        }
        return x, np.stack([tp_n[t + 1] for t in anchor_list])

    return pack(train_a), pack(splits["val"]), pack(test_a), norm_tp


def main():
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]

    train_d, val_d, test_d, norm_tp = build_windows(args)
    print(
        f"windows: {len(train_d[1])} train / {len(val_d[1])} val / {len(test_d[1])} test, "
        f"grid {args.grid}x{args.grid}, lag {args.lag}"
    )

    stream = CoreUNetConfig(
        levels=3,
        base_channels=4,
        input_lag=args.lag,
        spatial_size=(args.grid, args.grid),
        dropout_rate=0.0,
    )
    model_configs = {"core-unet": stream, "wf-unet": WFUNetConfig(stream_config=stream)}

    persistence = evaluate_mse(test_d[0]["tp"][:, -1], test_d[1], norm_tp)
    print(f"persistence test MSE {persistence:.5f}")

    rows = []
    for seed in seeds:
        for name, model_config in model_configs.items():
            t0 = time.time()
            config = TrainConfig(
                learning_rate=args.lr,
                batch_size=args.batch_size,
                max_epochs=args.epochs,
                seed=seed,
            )
            model, result = fit(
                name, model_config, config, train_d, val_d, out / f"{name}-seed{seed}"
            )
            mse = evaluate_mse(predict_frames(model, test_d[0]), test_d[1], norm_tp)
            rows.append(
                {
                    "model": name,
                    "seed": seed,
                    "test_mse": mse,
                    "best_val_loss": result.best_val_loss,
                    "best_epoch": result.best_epoch,
                    "seconds": round(time.time() - t0, 1),
                }
            )
            print(
                f"seed {seed} {name}: test MSE {mse:.5f} "
                f"(best val {result.best_val_loss:.6f} @ epoch {result.best_epoch}, "
                f"{rows[-1]['seconds']:.0f}s)"
            )

    medians = {
        name: float(np.median([r["test_mse"] for r in rows if r["model"] == name]))
        for name in model_configs
    }
    summary = {
        "persistence_mse": persistence,
        "median_mse": medians,
        "seeds": seeds,
        "runs": rows,
    }
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    with open(out / "runs.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)

    print(
        f"\nmedians: core-unet {medians['core-unet']:.5f}  "
        f"wf-unet {medians['wf-unet']:.5f}  persistence {persistence:.5f}"
    )
    winner = min(medians, key=medians.get)
    print(f"lower median held-out MSE: {winner}")


if __name__ == "__main__":
    main()
