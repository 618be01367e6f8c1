"""Command line entry point: ``trsb run <config.toml> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .experiments import InvariantError, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

log = logging.getLogger("trsb")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trsb", description="Gauge-field spin-chain experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment described by a TOML config")
    r.add_argument("config", help="experiment configuration file (TOML)")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. model.phi=0.5 (repeatable)")
    r.add_argument("--seed", type=int, help="master random seed")
    r.add_argument("--units", choices=("hz", "rad"), help="frequency units of the config")
    r.add_argument("--out", help="output directory")
    r.add_argument("--plots", action="store_true", help="also write SVG figures")
    r.add_argument("--workers", type=int, help="worker processes for sweeps")
    r.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.units is not None:
        overrides.append(f'units="{args.units}"')
    if args.out is not None:
        overrides.append(f"output.dir={_toml_string(args.out)}")
    if args.plots:
        overrides.append("output.plots=true")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    try:
        cfg = load_config(args.config, overrides)
        result = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # parameter values the model rejects (e.g. a two-site ring)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        print(f"invariant check failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    for path in result.files:
        log.info("wrote %s", path)
    print(f"{cfg.experiment.value}: {len(result.files)} files in {result.out_dir}")
    return EXIT_OK


def _toml_string(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


if __name__ == "__main__":
    sys.exit(main())
