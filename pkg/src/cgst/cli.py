"""Command-line entry point: one subcommand per scenario."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .lattice import ConfigurationError
from .reactions import ReactionConvergenceError
from .richards import NonConvergenceError
from .scenarios import SCENARIOS, list_presets, load_config, run_scenario
from .grw import StepSizeError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgst", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("presets", help="list shipped presets")
    for name in SCENARIOS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        p.add_argument("--preset", help="preset name (defaults to the scenario id)")
        p.add_argument("--config", help="YAML file merged over the preset")
        p.add_argument("--seed", type=int)
        p.add_argument("--ensemble", type=int)
        p.add_argument("--out", help="output directory", required=False)
        p.add_argument("--mode", choices=["det", "stoch"])
        p.add_argument("--workers", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        print("\n".join(list_presets()))
        return 0
    try:
        preset = args.preset or args.command
        cfg = load_config(
            preset, args.config, seed=args.seed, ensemble=args.ensemble, out=args.out, mode=args.mode, workers=args.workers
        )
        if cfg.scenario != args.command:
            raise ConfigurationError(f"config describes {cfg.scenario!r}, not {args.command!r}")
        out = cfg.out or f"out/{cfg.scenario}"
        _, manifest = run_scenario(cfg, out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, ReactionConvergenceError, StepSizeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"out": out, "files": manifest["files"]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
