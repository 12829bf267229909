#!/usr/bin/env python3
"""Aggregate run summaries under a results directory into a markdown table.

Rows are whatever `arch` values the summaries carry: the three stock
architectures come first in their canonical order, anything else (ablation
families) follows alphabetically. Architectures with no completed runs get
placeholder rows.
"""

import argparse
import json
from pathlib import Path

from frnet.bench import report_tables
from frnet.models import ARCHS


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--results", default="results", metavar="DIR")
    parser.add_argument("--out", default=None, metavar="FILE")
    args = parser.parse_args()

    results = Path(args.results)
    seen = set()
    for path in results.glob("**/*.json"):
        with open(path, encoding="utf-8") as fh:
            record = json.load(fh)
        if "arch" in record:
            seen.add(record["arch"])
    ordered = [a for a in ARCHS if a in seen]
    ordered += sorted(seen - set(ARCHS))
    table = report_tables(results, archs=ordered or ARCHS)
    print(table, end="")
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")


if __name__ == "__main__":
    main()
