"""Run every shipped scenario through the CLI and print one summary line each.

usage: python scripts/run_scenarios.py [--out out] [--only name ...]
"""
import argparse
import sys
import time
from pathlib import Path

from nlkg.cli import run

ROOT = Path(__file__).resolve().parent.parent

# scenario file -> subcommand
PLAN = [
    ("freq_example", "freq"),
    ("certify", "certify"),
    ("measure_small", "measure"),
    ("measure", "measure"),
    ("normalform", "normalform"),
    ("simulate", "simulate"),
    ("rate_sweep", "scaling"),
    ("uniformity", "scaling"),
    ("corollary", "corollary"),
]


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out")
    ap.add_argument("--only", nargs="*", default=None, help="scenario names to run")
    args = ap.parse_args(argv)
    worst = 0
    for name, cmd in PLAN:
        if args.only and name not in args.only:
            continue
        t0 = time.perf_counter()
        code, doc = run(cmd, ROOT / "scenarios" / f"{name}.json", Path(args.out) / name)
        dt = time.perf_counter() - t0
        passed = "" if doc is None or "passed" not in doc else f" passed={doc['passed']}"
        print(f"{name:15s} {cmd:11s} exit={code}{passed} {dt:.1f}s", flush=True)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
