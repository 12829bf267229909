"""Command-line surface: train, eval, bench, params, synth.

Every option can also come from a `key=value` config file passed with
--config; explicit command-line flags win over config values, which win
over built-in defaults. Exit codes: 0 success, 2 usage, 1 runtime error
with a machine-parseable `error:` prefix on stderr.
"""

import argparse
import json
import sys
from pathlib import Path

from .bench import bench_inference
from .data import load_samples, synth_vessels, write_png
from .errors import ConfigError, FRNetError
from .models import ARCHS, ModelConfig, build_model, load_checkpoint
from .blocks import FAMILIES, param_count
from .training import TrainConfig, evaluate, train

__all__ = ["cli", "main"]


def _parse_size(text):
    parts = str(text).lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected HxW, got {text!r}")
    return int(parts[0]), int(parts[1])


def _parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _read_config(path):
    entries = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise ConfigError(f"config file not readable: {path} ({err})") from err
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def _resolve(args, spec):
    """Merge defaults < config file < explicit CLI flags into a namespace."""
    from_file = _read_config(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(from_file) - set(spec))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    resolved = {}
    for name, (default, convert) in spec.items():
        cli_value = getattr(args, name)
        if cli_value is not None:
            resolved[name] = cli_value
        elif name in from_file:
            try:
                resolved[name] = convert(from_file[name])
            except (TypeError, ValueError) as err:
                raise ConfigError(f"config key {name}: {err}") from err
        else:
            resolved[name] = default
    return argparse.Namespace(**resolved)


_MODEL_SPEC = {
    "arch": ("frnet", str),
    "channels": (32, int),
    "blocks": (6, int),
    "recurrence": (2, int),
    "family": (None, str),
}

_SYNTH_SPEC = {
    "count": (12, int),
    "size": ((32, 32), _parse_size),
    "vessels": (4, int),
    "data_seed": (0, int),
}

_TRAIN_SPEC = {
    **_MODEL_SPEC,
    **_SYNTH_SPEC,
    "data": (None, str),
    "synthetic": (False, _parse_bool),
    "out": ("runs", str),
    "seeds": (1, int),
    "seed": (0, int),
    "epochs": (10, int),
    "lr": (1e-4, float),
    "batch_size": (2, int),
    "eval_every": (1, int),
    "threshold": (0.5, float),
}

_EVAL_SPEC = {
    **_SYNTH_SPEC,
    "ckpt": (None, str),
    "data": (None, str),
    "synthetic": (False, _parse_bool),
    "threshold": (0.5, float),
}

_BENCH_SPEC = {
    **_MODEL_SPEC,
    "size": ((256, 256), _parse_size),
    "warmup": (5, int),
    "runs": (30, int),
    "threads": ("single", str),
}

_PARAMS_SPEC = _MODEL_SPEC

_SYNTH_CMD_SPEC = {
    **_SYNTH_SPEC,
    "out": (None, str),
    "seed": (0, int),
    "width_lo": (1, int),
    "width_hi": (3, int),
}


def _model_config(opts):
    return ModelConfig(
        arch=opts.arch,
        channels=opts.channels,
        num_blocks=opts.blocks,
        recurrence_steps=opts.recurrence,
        block_family=opts.family,
    )


def _synth_sets(opts):
    """Deterministic synthetic train/val split; data_seed fixes the images
    independently of the model seed so reruns and seed sweeps share data.
    """
    if opts.count < 2:
        raise ConfigError(f"synthetic dataset needs count >= 2, got {opts.count}")
    h, w = opts.size
    samples = [
        synth_vessels(10_000 * (opts.data_seed + 1) + i, h, w, n_vessels=opts.vessels)
        for i in range(opts.count)
    ]
    n_val = max(1, opts.count // 4)
    return samples[:-n_val], samples[-n_val:]


def _eval_set(opts):
    if bool(opts.data) == bool(opts.synthetic):
        raise ConfigError("pass exactly one of --data or --synthetic")
    if opts.synthetic:
        _, val_set = _synth_sets(opts)
        return val_set
    return load_samples(opts.data)


def _cmd_train(args):
    opts = _resolve(args, _TRAIN_SPEC)
    if bool(opts.data) == bool(opts.synthetic):
        raise ConfigError("pass exactly one of --data or --synthetic")
    if opts.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {opts.seeds}")
    if opts.synthetic:
        train_set, val_set = _synth_sets(opts)
    else:
        samples = load_samples(opts.data)
        if len(samples) < 2:
            raise ConfigError("need at least 2 samples to split train/val")
        n_val = max(1, len(samples) // 4)
        train_set, val_set = samples[:-n_val], samples[-n_val:]
    out_root = Path(opts.out)
    out_root.mkdir(parents=True, exist_ok=True)
    for k in range(opts.seeds):
        seed = opts.seed + k
        model = build_model(_model_config(opts), seed=seed)
        run_dir = out_root / f"{opts.arch}_seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg = TrainConfig(
            learning_rate=opts.lr,
            epochs=opts.epochs,
            batch_size=opts.batch_size,
            seed=seed,
            threshold=opts.threshold,
            eval_every=opts.eval_every,
        )
        best, _ = train(
            model,
            train_set,
            val_set,
            cfg,
            history_path=run_dir / "history.csv",
            checkpoint_path=run_dir / "checkpoint.bin",
        )
        summary = {
            "arch": opts.arch,
            "seed": seed,
            "params": param_count(model),
            "best_epoch": best.epoch,
            "val_dice": best.val_dice,
            "val_acc": best.val_acc,
            "epochs": opts.epochs,
        }
        with open(run_dir / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        print(
            f"seed {seed}: best epoch {best.epoch} "
            f"val_dice {best.val_dice:.4f} val_acc {best.val_acc:.4f}"
        )
    return 0


def _cmd_eval(args):
    opts = _resolve(args, _EVAL_SPEC)
    if not opts.ckpt:
        raise ConfigError("--ckpt is required")
    model = load_checkpoint(opts.ckpt)
    dataset = _eval_set(opts)
    report = evaluate(model, dataset, threshold=opts.threshold)
    print(f"dice={report['dice_mean']:.4f} acc={report['acc_mean']:.4f} n={len(dataset)}")
    return 0


def _cmd_bench(args):
    opts = _resolve(args, _BENCH_SPEC)
    model = build_model(_model_config(opts), seed=0)
    h, w = opts.size
    report = bench_inference(
        model,
        (1, model.config.in_channels, h, w),
        warmup=opts.warmup,
        runs=opts.runs,
        thread_mode=opts.threads,
    )
    print(report.as_line())
    return 0


def _cmd_params(args):
    opts = _resolve(args, _PARAMS_SPEC)
    model = build_model(_model_config(opts), seed=0)
    print(param_count(model))
    return 0


def _cmd_synth(args):
    opts = _resolve(args, _SYNTH_CMD_SPEC)
    if not opts.out:
        raise ConfigError("--out is required")
    if opts.count < 1:
        raise ConfigError(f"--count must be >= 1, got {opts.count}")
    out_root = Path(opts.out)
    (out_root / "images").mkdir(parents=True, exist_ok=True)
    (out_root / "masks").mkdir(parents=True, exist_ok=True)
    h, w = opts.size
    for i in range(opts.count):
        sample = synth_vessels(
            opts.seed + i, h, w,
            n_vessels=opts.vessels,
            width_range=(opts.width_lo, opts.width_hi),
        )
        write_png(out_root / "images" / f"{sample.id}.png", sample.image)
        write_png(out_root / "masks" / f"{sample.id}.png", sample.mask)
    print(f"wrote {opts.count} image/mask pairs to {out_root}")
    return 0


def _add_model_flags(sub):
    sub.add_argument("--arch", choices=ARCHS, default=None)
    sub.add_argument("--channels", type=int, default=None)
    sub.add_argument("--blocks", type=int, default=None)
    sub.add_argument("--recurrence", type=int, default=None)
    sub.add_argument("--family", choices=FAMILIES, default=None)


def _add_synth_flags(sub):
    sub.add_argument("--count", type=int, default=None)
    sub.add_argument("--size", type=_parse_size, default=None, metavar="HxW")
    sub.add_argument("--vessels", type=int, default=None)
    sub.add_argument("--data-seed", dest="data_seed", type=int, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="frnet", description="Full-resolution vessel segmentation toolkit."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train_cmd = commands.add_parser("train", help="train a model, writing checkpoints and history")
    _add_model_flags(train_cmd)
    _add_synth_flags(train_cmd)
    train_cmd.add_argument("--data", default=None, metavar="DIR")
    train_cmd.add_argument("--synthetic", action="store_const", const=True, default=None)
    train_cmd.add_argument("--out", default=None, metavar="DIR")
    train_cmd.add_argument("--seeds", type=int, default=None, metavar="K")
    train_cmd.add_argument("--seed", type=int, default=None)
    train_cmd.add_argument("--epochs", type=int, default=None)
    train_cmd.add_argument("--lr", type=float, default=None)
    train_cmd.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    train_cmd.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    train_cmd.add_argument("--threshold", type=float, default=None)
    train_cmd.add_argument("--config", default=None, metavar="FILE")
    train_cmd.set_defaults(func=_cmd_train)

    eval_cmd = commands.add_parser("eval", help="evaluate a checkpoint, printing Dice/Acc")
    _add_synth_flags(eval_cmd)
    eval_cmd.add_argument("--ckpt", default=None, metavar="FILE")
    eval_cmd.add_argument("--data", default=None, metavar="DIR")
    eval_cmd.add_argument("--synthetic", action="store_const", const=True, default=None)
    eval_cmd.add_argument("--threshold", type=float, default=None)
    eval_cmd.add_argument("--config", default=None, metavar="FILE")
    eval_cmd.set_defaults(func=_cmd_eval)

    bench_cmd = commands.add_parser("bench", help="time eval-mode forward passes")
    _add_model_flags(bench_cmd)
    bench_cmd.add_argument("--size", type=_parse_size, default=None, metavar="HxW")
    bench_cmd.add_argument("--warmup", type=int, default=None)
    bench_cmd.add_argument("--runs", type=int, default=None)
    bench_cmd.add_argument("--threads", choices=("single", "parallel"), default=None)
    bench_cmd.add_argument("--config", default=None, metavar="FILE")
    bench_cmd.set_defaults(func=_cmd_bench)

    params_cmd = commands.add_parser("params", help="print the exact parameter count")
    _add_model_flags(params_cmd)
    params_cmd.add_argument("--config", default=None, metavar="FILE")
    params_cmd.set_defaults(func=_cmd_params)

    synth_cmd = commands.add_parser("synth", help="write synthetic image/mask PNG pairs")
    _add_synth_flags(synth_cmd)
    synth_cmd.add_argument("--out", default=None, metavar="DIR")
    synth_cmd.add_argument("--seed", type=int, default=None)
    synth_cmd.add_argument("--width-lo", dest="width_lo", type=int, default=None)
    synth_cmd.add_argument("--width-hi", dest="width_hi", type=int, default=None)
    synth_cmd.add_argument("--config", default=None, metavar="FILE")
    synth_cmd.set_defaults(func=_cmd_synth)

    return parser


def cli(argv=None):
    """Run one command; returns the process exit code instead of exiting."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FRNetError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
