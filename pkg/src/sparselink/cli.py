"""Command line front end.

Subcommands: ``ber-sweep``, ``nmse-sweep``, ``precoder-design`` and
``sparsity-report``, each taking a config file plus optional overrides.
Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness
from .chanest import EstimationError
from .config import ConfigError, load_config
from .precoder import PowerSolveError


def _add_common(sub):
    sub.add_argument("config", help="experiment config file (flat key=value)")
    sub.add_argument("--seed", type=int, help="override run.seed")
    sub.add_argument("--trials", type=int, help="override run.trials")
    sub.add_argument("--out", help="override run.out")
    sub.add_argument("--threads", type=int, help="override run.threads")
    sub.add_argument("--debug-dump", metavar="DIR", help="dump per-trial intermediates as .npz")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparselink")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, descr in (
        ("ber-sweep", "Monte-Carlo BER over the SNR grid"),
        ("nmse-sweep", "pilot-estimation NMSE per estimator over the SNR grid"),
        ("precoder-design", "design one precoder and dump taps + objective trace"),
        ("sparsity-report", "delay-domain profiles and truncation NMSE"),
    ):
        _add_common(subs.add_parser(name, help=descr))
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    if args.out is not None:
        cfg.out = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    try:
        if args.command == "ber-sweep":
            harness.run_ber_sweep(cfg, debug_dir=args.debug_dump)
            print(f"wrote {cfg.out}")
        elif args.command == "nmse-sweep":
            harness.run_nmse_sweep(cfg)
            print(f"wrote {cfg.out}")
        elif args.command == "precoder-design":
            _, trace = harness.run_precoder_design(cfg)
            status = "converged" if trace.converged else "iteration budget reached"
            print(f"wrote {cfg.out} and {cfg.out}.trace.csv ({trace.n_iters} iterations, {status})")
        elif args.command == "sparsity-report":
            _, window_rows, occupancy = harness.run_sparsity_report(cfg)
            print(occupancy)
            for w, c_nmse, p_nmse, e_nmse in window_rows:
                print(
                    f"window {w:4d}: truncation NMSE channel {c_nmse:.3e} "
                    f"precoder {p_nmse:.3e} effective {e_nmse:.3e}"
                )
            print(f"wrote {cfg.out} and {cfg.out}.windows.csv")
    except (EstimationError, PowerSolveError, harness.StageError, np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
