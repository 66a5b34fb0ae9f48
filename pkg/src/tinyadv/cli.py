"""Command-line entry point: seeded, config-driven experiment runs."""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import COMMANDS, ConfigError, ExperimentConfig, run_experiment, summarize


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tinyadv",
        description="Adversarial robustness experiments on tiny vision models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment from a JSON config")
        p.add_argument("--config", required=True, help="path to the JSON config document")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
    s = sub.add_parser("summarize", help="merge results.json bundles into one table")
    s.add_argument("results", nargs="+", help="results.json files or run directories")
    s.add_argument("--out", default=None, help="write the merged table as CSV here")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "summarize":
        try:
            print(summarize(args.results, out_csv=args.out))
        except Exception as err:  # noqa: BLE001 - single reporting point
            print(json.dumps({"error": {"message": str(err)}}), file=sys.stderr)
            return 1
        return 0
    try:
        cfg = ExperimentConfig.load(args.command, args.config, seed=args.seed, out=args.out)
    except ConfigError as err:
        print(json.dumps(err.report()), file=sys.stderr)
        return 2
    try:
        results = run_experiment(cfg)
    except Exception as err:  # noqa: BLE001 - single reporting point
        print(json.dumps({"error": {"message": str(err)}}), file=sys.stderr)
        return 1
    print(json.dumps({"out": str(cfg.out), "metrics": results["metrics"]}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
