"""Command-line entry point: ``bfeda <scenario> --config FILE [options]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import SCENARIOS, ConfigError, parse_config
from .runner import EXIT_CONFIG, run_scenario


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bfeda", description=(
        "Damped Navier-Stokes simulations, nudging data assimilation and 1D blow-up studies."))
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", required=True, metavar="PATH", help="scenario config file")
    ap.add_argument("--output", default="out", metavar="DIR", help="artifact directory")
    ap.add_argument("--seed", type=int, default=None, metavar="N",
                    help="overrides [run] seed")
    ap.add_argument("--threads", type=int, default=None, metavar="N",
                    help="FFT worker count (default: $BFEDA_THREADS or 1)")
    ap.add_argument("--resume", default=None, metavar="CHECKPOINT",
                    help="start from a checkpoint instead of [initial]")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        logging.error("--threads must be positive")
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config, args.scenario)
    except ConfigError as exc:
        logging.error("%s", exc)
        return EXIT_CONFIG
    return run_scenario(cfg, args.output, args.seed, args.threads, args.resume)


if __name__ == "__main__":
    sys.exit(main())
