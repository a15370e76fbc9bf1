"""Command-line entry point: ``rfiqkd {fig4,fig5,finite-key,steering,custom}``.

Exit codes: 0 success, 2 configuration error, 3 infeasible device model,
4 other numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, ScenarioConfig, SCENARIOS, load_config
from .experiments import run_scenario, write_tables
from .linksim import BACKENDS
from .security import InfeasibleModelError

log = logging.getLogger("rfiqkd")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rfiqkd", description="Handheld reference-frame-independent QKD simulations.")
    sub = p.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file (defaults apply to missing fields)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--backend", choices=BACKENDS, help="count simulator")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "custom":
            sp.add_argument("--counts", help="analyse this CountMatrix CSV instead of simulating")
    return p


def resolve_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    overrides = {
        "scenario": args.scenario,
        "seed": args.seed,
        "output_dir": args.out,
        "workers": args.workers,
        "backend": args.backend,
    }
    if args.seed is not None and args.seed < 0:
        raise ConfigError("seed must be >= 0")
    try:
        return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    kwargs = {"counts_path": args.counts} if args.scenario == "custom" and args.counts else {}
    try:
        with np.errstate(all="ignore"):
            tables = run_scenario(cfg, **kwargs)
    except InfeasibleModelError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in write_tables(tables, cfg):
        log.info("wrote %s", path)
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
