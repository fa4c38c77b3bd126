"""Command line entry point: ``fppcomp <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import EXIT_INVALID, EXIT_OK, ExperimentSpec, SpecError, replay, run_experiment

SUBCOMMANDS = {
    "simulate": "single-run",
    "sweep": "coexistence-sweep",
    "density": "density-study",
    "shade": "shade-study",
    "shape": "shape-study",
    "fluct": "fluctuation-study",
    "validate": "validate",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON experiment spec (fields of ExperimentSpec)")
    p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    p.add_argument("--replicas", type=int)
    p.add_argument("--box", type=int, help="box half-width L")
    p.add_argument("--out", type=Path, help="artifact directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--condition", choices=("none", "g1", "coex"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fppcomp", description="Two-species first-passage competition experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMANDS.items():
        _common(sub.add_parser(name, help=f"run a {kind} experiment"))
    rp = sub.add_parser("replay", help="re-run a recorded experiment and compare artifacts")
    rp.add_argument("source", type=Path, help="directory (or manifest.json) of a previous run")
    rp.add_argument("--out", type=Path, required=True)
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    doc = {}
    if args.config is not None:
        doc = json.loads(args.config.read_text())
    doc["kind"] = SUBCOMMANDS[args.command]
    if args.seed is not None:
        doc["base_seed"] = args.seed
    if args.replicas is not None:
        doc["replicas"] = args.replicas
    if args.workers is not None:
        doc["workers"] = args.workers
    if args.condition is not None:
        doc["conditioning"] = args.condition
    if args.box is not None:
        doc.setdefault("competition", {})
        doc["competition"] = {**doc["competition"], "box": args.box}
    return ExperimentSpec.from_dict(doc)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "replay":
        try:
            same, diff = replay(args.source, args.out)
        except (OSError, KeyError, SpecError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        print("identical" if same else f"artifacts differ: {sorted(diff)}")
        return EXIT_OK if same else 1
    try:
        spec = spec_from_args(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    outcome = run_experiment(spec, args.out)
    print(json.dumps(outcome.summary, indent=2, sort_keys=True, default=str))
    if args.out is not None:
        print(f"artifacts in {args.out}; replay with: fppcomp replay {args.out} --out <dir>", file=sys.stderr)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
