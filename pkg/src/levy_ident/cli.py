"""Command line entry point ``levy-ident``.

Exit status: 0 on success, 2 for an invalid configuration, 3 when more
replications failed than the failure budget allows.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import MODES, ConfigError, load_config
from .experiments import FailureBudgetExceeded, run
from .optim import EstimationError

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_ESTIMATION = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levy-ident", description="Identify linear systems driven by Levy noise.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, default=None, help="worker processes for mc-validate")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {"mode": args.mode, "seed": args.seed, "workers": args.workers, "output_dir": args.out}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"levy-ident: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"levy-ident: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run(cfg, workers=cfg.workers, out_dir=cfg.output_dir)
    except FailureBudgetExceeded as exc:
        print(f"levy-ident: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except EstimationError as exc:
        print(f"levy-ident: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
