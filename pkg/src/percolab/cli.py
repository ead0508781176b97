"""Command line entry point: ``percolab run|validate|preset|dump-graph``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import lab
from .errors import ConfigError, PercolabError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the root seed")
    common.add_argument("--workers", type=int, help="worker processes (default: $PERCOLAB_WORKERS or config)")
    common.add_argument("--out-dir", help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="percolab", description="Spatial graph percolation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.add_argument("config")
    p = sub.add_parser("validate", parents=[common], help="check a config and report every problem")
    p.add_argument("config")
    p = sub.add_parser("preset", parents=[common], help="run a shipped preset")
    p.add_argument("name", choices=lab.PRESETS)
    p.add_argument("--show", action="store_true", help="print the preset config instead of running it")
    p = sub.add_parser("dump-graph", parents=[common], help="write points and edges for one replicate")
    p.add_argument("config")
    p.add_argument("--replicate", type=int, required=True)
    return parser


def _load(args) -> lab.ExperimentConfig:
    if args.command == "preset":
        config = lab.load_preset(args.name)
    else:
        config = lab.load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out_dir is not None:
        config = replace(config, out_dir=args.out_dir)
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "preset" and args.show:
        print(lab.preset_text(args.name), end="")
        return EXIT_OK
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"invalid config:\n{exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, PercolabError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        print(f"ok: {config.name} ({config.mode}, {config.replicates} replicates)")
        return EXIT_OK
    try:
        if args.command == "dump-graph":
            files = lab.dump_graph(config, args.replicate)
        else:
            files = lab.run_experiment(config, workers=args.workers).files
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"error in {config.name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
