"""Command line entry point: `rdlab <subcommand> --config <file|preset> ...`.

Exit status: 0 success, 1 a check or validation failed, 2 bad
configuration or arguments, 3 the integration blew up or a report is
infeasible (a JSON diagnostic is written to the output directory).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, preset_names
from .experiments import COMMANDS, Infeasible
from .reporting import write_json
from .solver import BlowUpError


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdlab", description="Reaction-diffusion attractor laboratory.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default="chafee_infante",
                       help="config file path or shipped preset name (default: chafee_infante)")
        p.add_argument("--out", type=Path, default=Path("out"),
                       help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None, help="64-bit seed, overrides the config")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a config key; repeatable")
        if name == "ladder":
            p.add_argument("--tau", type=float, default=None,
                           help="wait before the sup-norm bound is fitted")
    sub.add_parser("presets", help="list shipped presets")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        print("\n".join(preset_names()))
        return 0
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    kwargs = {}
    if args.command == "ladder":
        if args.tau is not None and not args.tau > 0:
            print("error: --tau must be positive", file=sys.stderr)
            return 2
        kwargs["tau"] = args.tau
    try:
        outcome = COMMANDS[args.command](cfg, args.out, **kwargs)
    except BlowUpError as exc:
        args.out.mkdir(parents=True, exist_ok=True)
        write_json(args.out / f"{args.command}_error.json",
                   {"command": args.command, "reason": "blow-up", "time": exc.time,
                    "config": cfg.resolved()})
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Infeasible as exc:
        args.out.mkdir(parents=True, exist_ok=True)
        write_json(args.out / f"{args.command}_error.json",
                   {"command": args.command, **exc.diagnostic, "config": cfg.resolved()})
        print(f"error: {exc}", file=sys.stderr)
        return 3
    status = "ok" if outcome.ok else "FAILED"
    print(f"{outcome.command}: {status}; wrote {', '.join(outcome.files)} to {args.out}")
    if args.command == "check":
        for r in outcome.report["results"]:
            print(f"  {'pass' if r['passed'] else 'FAIL'}  {r['name']}")
    return 0 if outcome.ok else 1


if __name__ == "__main__":
    sys.exit(main())
