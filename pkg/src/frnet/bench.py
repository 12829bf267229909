"""Forward-pass latency harness and the run-summary comparison table.

Latency numbers on this machine are only meaningful as orderings and
ratios between architectures, so the harness pins thread mode, times
nothing but the forward pass, and reports distribution statistics rather
than a single number.
"""

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import Tensor, no_grad
from .errors import ConfigError, ContractError, DimensionError

logger = logging.getLogger(__name__)

__all__ = ["BenchReport", "bench_inference", "report_tables"]

_THREAD_MODES = ("single", "parallel")


@dataclass(frozen=True)
class BenchReport:
    """Latency statistics for one architecture at one input shape."""

    arch: str
    input_shape: tuple
    warmup_runs: int
    timed_runs: int
    mean_ms: float
    std_ms: float
    p50_ms: float
    p95_ms: float
    thread_mode: str

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if self.thread_mode not in _THREAD_MODES:
            raise ConfigError(f"thread_mode must be one of {_THREAD_MODES}, got {self.thread_mode!r}")
        if self.timed_runs < 10:
            raise ContractError(f"timed_runs must be >= 10, got {self.timed_runs}")
        if self.warmup_runs < 3:
            raise ContractError(f"warmup_runs must be >= 3, got {self.warmup_runs}")
        for name in ("mean_ms", "p50_ms", "p95_ms"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ContractError(f"{name} must be positive and finite, got {value}")
        if not np.isfinite(self.std_ms) or self.std_ms < 0.0:
            raise ContractError(f"std_ms must be nonnegative and finite, got {self.std_ms}")
        if self.p50_ms > self.p95_ms:
            raise ContractError(f"p50 {self.p50_ms} exceeds p95 {self.p95_ms}")

    def as_line(self):
        h, w = self.input_shape[-2:]
        return (
            f"arch={self.arch} size={h}x{w} threads={self.thread_mode} "
            f"warmup={self.warmup_runs} runs={self.timed_runs} "
            f"mean_ms={self.mean_ms:.3f} std_ms={self.std_ms:.3f} "
            f"p50_ms={self.p50_ms:.3f} p95_ms={self.p95_ms:.3f}"
        )


def bench_inference(model, input_shape, warmup=5, runs=30, thread_mode="single"):
    """Time eval-mode forward passes on random input; construction and data
    generation happen before the clock starts.
    """
    if warmup < 3:
        raise ConfigError(f"warmup must be >= 3, got {warmup}")
    if runs < 10:
        raise ConfigError(f"runs must be >= 10, got {runs}")
    if thread_mode not in _THREAD_MODES:
        raise ConfigError(f"thread_mode must be one of {_THREAD_MODES}, got {thread_mode!r}")
    input_shape = tuple(int(d) for d in input_shape)
    if len(input_shape) != 4:
        raise ConfigError(f"input_shape must be (B,C,H,W), got {input_shape}")

    was_training = model.training
    model.eval()
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(0.0, 1.0, size=input_shape).astype(np.float32))
    limits = 1 if thread_mode == "single" else None
    times_ms = []
    try:
        with threadpool_limits(limits=limits):
            with no_grad():
                try:
                    for _ in range(warmup):
                        model(x)
                except DimensionError as err:
                    raise ConfigError(f"input shape {input_shape} illegal for this model: {err}") from err
                for _ in range(runs):
                    t0 = time.perf_counter()
                    model(x)
                    times_ms.append((time.perf_counter() - t0) * 1e3)
    finally:
        if was_training:
            model.train()
    times_ms = np.asarray(times_ms)
    return BenchReport(
        arch=getattr(getattr(model, "config", None), "arch", type(model).__name__),
        input_shape=input_shape,
        warmup_runs=warmup,
        timed_runs=runs,
        mean_ms=float(times_ms.mean()),
        std_ms=float(times_ms.std()),
        p50_ms=float(np.percentile(times_ms, 50)),
        p95_ms=float(np.percentile(times_ms, 95)),
        thread_mode=thread_mode,
    )


_TABLE_ARCHS = ("frnet_base", "frnet", "unet_baseline")


def _fmt_pct(values):
    # `mm.dd±s.ss` over seeds; a single seed has no spread to report.
    scaled = [100.0 * v for v in values]
    if len(scaled) == 1:
        return f"{scaled[0]:.2f}"
    return f"{np.mean(scaled):.2f}±{np.std(scaled):.2f}"


def report_tables(results_dir, archs=_TABLE_ARCHS):
    """Assemble run summaries into a markdown comparison table.

    Reads every `*.json` summary under results_dir (keys: arch, seed, and
    any of val_dice/val_acc/params/mean_ms). Rows are architectures with
    Dice/Acc aggregated over seeds; cells with no completed measurement
    hold the placeholder "—" and a warning is logged.
    """
    results_dir = Path(results_dir)
    runs = {}
    for path in sorted(results_dir.glob("**/*.json")):
        with open(path, encoding="utf-8") as fh:
            record = json.load(fh)
        if "arch" not in record:
            continue
        runs.setdefault(record["arch"], []).append(record)

    header = "| Method | Dice(%) | Acc(%) | Param | Time |"
    rule = "|---|---|---|---|---|"
    lines = [header, rule]
    for arch in archs:
        records = runs.get(arch, [])
        if not records:
            logger.warning("no completed runs for %s; row left blank", arch)
            lines.append(f"| {arch} | — | — | — | — |")
            continue
        dice = [r["val_dice"] for r in records if "val_dice" in r]
        acc = [r["val_acc"] for r in records if "val_acc" in r]
        params = sorted({r["params"] for r in records if "params" in r})
        times = [r["mean_ms"] for r in records if "mean_ms" in r]
        cells = [
            _fmt_pct(dice) if dice else "—",
            _fmt_pct(acc) if acc else "—",
            f"{params[0]:,}" if len(params) == 1 else "—",
            f"{np.mean(times):.1f}ms" if times else "—",
        ]
        lines.append(f"| {arch} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
