"""Run every experiment of the ``lab`` CLI and write the CSVs into one directory.

    python3 scripts/run_experiments.py --out results [--quick]

``--quick`` shrinks the sweeps to a couple of minutes in total.
"""
import argparse
import sys
import time

from hpbem.cli import main as lab


def jobs(out, quick):
    if quick:
        return [
            ["refel", "--pmax", "8"],
            ["sweep-p", "--geom", "screen:3", "--p", "1..3"],
            ["sweep-h", "--geom", "screen:3", "--mode", "uniform", "--levels", "1", "--p", "2",
             "--precond", "B2,B3"],
            ["memory", "--geom", "fichera", "--p", "2..3", "--levels", "1"],
            ["norms", "--geom", "screen:16", "--p", "1..2"],
        ]
    return [
        ["refel", "--pmax", "10"],
        ["sweep-p", "--geom", "screen:3", "--p", "1..5"],
        ["sweep-p", "--geom", "fichera", "--p", "1..4", "--alpha", "0.2"],
        ["sweep-h", "--geom", "screen:3", "--mode", "uniform", "--levels", "3", "--p", "3",
         "--precond", "B2,B3"],
        ["sweep-h", "--geom", "screen:3", "--mode", "corner:0.25", "--levels", "4", "--p", "3",
         "--precond", "B2,B3"],
        ["sweep-h", "--geom", "fichera", "--mode", "corner:0.25", "--levels", "3", "--p", "3",
         "--precond", "B2,B3"],
        ["memory", "--geom", "fichera", "--p", "2..5", "--levels", "2"],
        ["norms", "--geom", "screen:16", "--p", "1..5"],
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args(argv)
    status = 0
    for k, job in enumerate(jobs(args.out, args.quick)):
        # repeated sweep kinds get their own subdirectory so CSVs are not overwritten
        out = f"{args.out}/{k:02d}-{job[0]}"
        t = time.perf_counter()
        print(f"lab {' '.join(job)} --out {out}", file=sys.stderr)
        rc = lab(job + ["--out", out])
        print(f"  exit {rc} after {time.perf_counter() - t:.0f}s", file=sys.stderr)
        status = status or rc
    return status


if __name__ == "__main__":
    sys.exit(main())
