#!/usr/bin/env python3
"""Multi-seed ablation of the block recurrence on a synthetic vessel split.

Trains the same architecture with recurrent blocks and with their
single-pass counterpart across several seeds on identical data, then
writes one summary JSON per run for make_report.py to aggregate.
"""

import argparse
import json
from pathlib import Path

from frnet.blocks import param_count
from frnet.data import synth_vessels
from frnet.models import ModelConfig, build_model
from frnet.training import TrainConfig, train


def build_split(count, size, data_seed):
    samples = [
        synth_vessels(10_000 * (data_seed + 1) + i, size, size, n_vessels=4)
        for i in range(count)
    ]
    n_val = max(1, count // 4)
    return samples[:-n_val], samples[-n_val:]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--families", nargs="+", default=["recurrent_convnext", "convnext_3x3"])
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--count", type=int, default=32)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--channels", type=int, default=32)
    parser.add_argument("--blocks", type=int, default=6)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--batch-size", type=int, default=2)
    parser.add_argument("--eval-every", type=int, default=5)
    parser.add_argument("--data-seed", type=int, default=0)
    parser.add_argument("--out", default="results/ablation", metavar="DIR")
    args = parser.parse_args()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, val_set = build_split(args.count, args.size, args.data_seed)

    for family in args.families:
        for seed in range(args.seeds):
            config = ModelConfig(
                arch="frnet",
                channels=args.channels,
                num_blocks=args.blocks,
                block_family=family,
            )
            model = build_model(config, seed=seed)
            cfg = TrainConfig(
                learning_rate=args.lr,
                epochs=args.epochs,
                batch_size=args.batch_size,
                seed=seed,
                eval_every=args.eval_every,
            )
            run_dir = out_dir / f"{family}_seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            best, _ = train(
                model,
                train_set,
                val_set,
                cfg,
                history_path=run_dir / "history.csv",
                checkpoint_path=run_dir / "checkpoint.bin",
            )
            summary = {
                "arch": family,
                "seed": seed,
                "params": param_count(model),
                "best_epoch": best.epoch,
                "val_dice": best.val_dice,
                "val_acc": best.val_acc,
            }
            with open(run_dir / "summary.json", "w", encoding="utf-8") as fh:
                json.dump(summary, fh, indent=2, sort_keys=True)
            print(
                f"{family} seed {seed}: best epoch {best.epoch} "
                f"val_dice {best.val_dice:.4f} val_acc {best.val_acc:.4f}"
            )


if __name__ == "__main__":
    main()
