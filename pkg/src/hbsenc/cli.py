"""Command-line entry point: ``hbsenc {compress,solve,encode,exp3d} --config FILE --out DIR``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure in at
least one row (the remaining rows are still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .errors import HBSError
from .experiments import ConfigError, EXPERIMENTS, format_csv, load_config, parse_config, run_experiment
from .io import atomic_write_text

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERICAL"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbsenc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key=value config file (defaults if omitted)")
        p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--no-proxy", action="store_true", help="compress without proxy surfaces")
        p.add_argument("--t", type=float, help="scaling parameter t in (0, 1]")
        p.add_argument("--alpha", type=float, help="Tikhonov parameter")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {
        "seed": args.seed,
        "t_list": (args.t,) if args.t is not None else None,
        "alpha": args.alpha,
        "proxy": "off" if args.no_proxy else None,
    }
    try:
        if args.config is not None:
            cfg = load_config(args.config, args.command, overrides)
        else:
            cfg = parse_config("", args.command, overrides=overrides)
    except ConfigError as exc:
        print(f"hbsenc: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    try:
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"hbsenc: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HBSError as exc:
        print(f"hbsenc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    out = args.out
    for table, rows in sorted(result.tables.items()):
        atomic_write_text(out / f"{table}.csv", format_csv(rows))
    lines = [f"started {started}", f"finished {time.strftime('%Y-%m-%dT%H:%M:%S')}", f"config {cfg}"]
    lines += result.log
    atomic_write_text(out / f"{cfg.stem}.log", "\n".join(lines) + "\n")
    for table in sorted(result.tables):
        print(out / f"{table}.csv")
    return EXIT_NUMERICAL if result.numerical_failure else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
