"""Command line entry point ``lab``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .experiments import (ExperimentConfig, InvariantViolation, bracket_violations,
                          run_h_sweep, run_memory_table, run_norm_equivalence_study, run_p_sweep,
                          run_refel_study)


def int_range(text: str) -> tuple:
    """'1..5' -> (1,2,3,4,5); '2,4' -> (2,4); '3' -> (3,)."""
    if ".." in text:
        a, b = text.split("..")
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(t) for t in text.split(","))


def _out(args, name):
    return os.path.join(args.out, name)


def _common(sub):
    sub.add_argument("--out", default="results", help="output directory")
    sub.add_argument("--dense-limit", type=int, default=4000)
    sub.add_argument("--seed", type=int, default=1729)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lab", description="hp-BEM preconditioner experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sp = ap.add_subparsers(dest="command", required=True)

    s = sp.add_parser("refel", help="reference element conditioning")
    s.add_argument("--pmax", type=int, default=10)
    _common(s)

    for name in ("sweep-p", "sweep-h"):
        s = sp.add_parser(name, help=f"{name[-1]}-sweep of condition numbers")
        s.add_argument("--geom", default="screen:3")
        s.add_argument("--p", type=int_range, default=(1, 2, 3, 4, 5) if name == "sweep-p" else (3,))
        s.add_argument("--precond", default="none,diag,B,B2,B3")
        s.add_argument("--alpha", type=float, default=None)
        s.add_argument("--mode", default="uniform", help="uniform | corner:THETA | file:PATH")
        s.add_argument("--levels", type=int, default=0 if name == "sweep-p" else 3)
        _common(s)

    s = sp.add_parser("memory", help="patch solver memory per dof")
    s.add_argument("--geom", default="fichera")
    s.add_argument("--p", type=int_range, default=(2, 3, 4, 5))
    s.add_argument("--levels", type=int, default=2)
    s.add_argument("--mode", default="uniform")
    _common(s)

    s = sp.add_parser("norms", help="coefficient norm equivalences on screens")
    s.add_argument("--geom", default="screen:16")
    s.add_argument("--p", type=int_range, default=(1, 2, 3, 4, 5))
    s.add_argument("--dof-cap", type=int, default=2500, help="skip cells with more unknowns")
    _common(s)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "refel":
            if not 1 <= args.pmax <= 10:
                raise ValueError("pmax must lie in [1, 10]")
            _, slopes, text = run_refel_study(range(1, args.pmax + 1), _out(args, "refel.csv"),
                                              args.seed)
        elif args.command in ("sweep-p", "sweep-h"):
            cfg = ExperimentConfig(geometry=args.geom, p_values=args.p, refinement=args.mode,
                                   levels=args.levels, alpha=args.alpha,
                                   preconditioners=tuple(args.precond.split(",")),
                                   dense_limit=args.dense_limit, output_dir=args.out,
                                   seed=args.seed)
            run = run_p_sweep if args.command == "sweep-p" else run_h_sweep
            _, text = run(cfg, _out(args, f"{args.command}.csv"))
        elif args.command == "memory":
            cfg = ExperimentConfig(geometry=args.geom, p_values=args.p, refinement=args.mode,
                                   levels=args.levels, output_dir=args.out, seed=args.seed)
            _, text = run_memory_table(cfg, _out(args, "memory.csv"))
        else:
            cfg = ExperimentConfig(geometry=args.geom, p_values=args.p, output_dir=args.out,
                                   seed=args.seed)
            _, fits, text = run_norm_equivalence_study(cfg, _out(args, "norms.csv"),
                                                       dof_cap=args.dof_cap)
            bad = bracket_violations(fits)
            if bad:
                for key, val, (lo, hi) in bad:
                    print(f"exponent {key} = {val:.3f} outside [{lo}, {hi}]", file=sys.stderr)
                raise InvariantViolation("norm exponents violate the proven brackets")
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
