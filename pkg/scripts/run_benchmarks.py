#!/usr/bin/env python3
"""Time all three architectures at one input size and write bench summaries.

Single-threaded by default so runs are comparable across machines; absolute
milliseconds are machine-specific, only the orderings travel.
"""

import argparse
import json
from pathlib import Path

from frnet.bench import bench_inference
from frnet.blocks import param_count
from frnet.models import ARCHS, ModelConfig, build_model


def parse_size(text):
    h, w = text.lower().split("x")
    return int(h), int(w)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=parse_size, default=(256, 256), metavar="HxW")
    parser.add_argument("--runs", type=int, default=30)
    parser.add_argument("--warmup", type=int, default=5)
    parser.add_argument("--threads", choices=("single", "parallel"), default="single")
    parser.add_argument("--out", default="results", metavar="DIR")
    args = parser.parse_args()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = args.size
    for arch in ARCHS:
        model = build_model(ModelConfig(arch=arch), seed=0)
        report = bench_inference(
            model,
            (1, model.config.in_channels, h, w),
            warmup=args.warmup,
            runs=args.runs,
            thread_mode=args.threads,
        )
        print(report.as_line())
        summary = {
            "arch": arch,
            "params": param_count(model),
            "input_shape": list(report.input_shape),
            "thread_mode": report.thread_mode,
            "timed_runs": report.timed_runs,
            "mean_ms": report.mean_ms,
            "std_ms": report.std_ms,
            "p50_ms": report.p50_ms,
            "p95_ms": report.p95_ms,
        }
        with open(out_dir / f"bench_{arch}.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
