"""Run the desk-scale replications for Scenarios I and II.

Outputs land in ``results/desk_<scenario>/`` (report.csv, panels.json,
summary.json).  Expect roughly three minutes per replication per CPU core;
set JMSL_WORKERS to spread replications over several processes.

    python scripts/desk_replication.py            # both scenarios, 30 reps
    python scripts/desk_replication.py --reps 2 --scenarios I
"""
import argparse
import sys
from pathlib import Path

from jmsl.cli import desk_replicate_args, main

ROOT = Path(__file__).resolve().parents[1]


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", default="I,II")
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--results", default=str(ROOT / "results"))
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args(argv)
    code = 0
    for scenario in args.scenarios.split(","):
        out = Path(args.results) / f"desk_{scenario}"
        extra = ["--force"] if args.force else []
        rc = main(desk_replicate_args(scenario, out, args.reps) + extra)
        print(f"scenario {scenario}: exit {rc} -> {out}")
        code = max(code, rc)
    return code


if __name__ == "__main__":
    sys.exit(run())
