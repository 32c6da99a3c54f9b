"""Command-line entry point: ``nfbeam run|validate|list-experiments``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness


def _load(ref):
    return harness.ExperimentConfig.load(harness.resolve_config(ref))


def cmd_run(args) -> int:
    cfg = _load(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    manifest = harness.run_experiment(cfg, workers=args.workers)
    files = harness.emit_csv(manifest, cfg.output_dir, traces=cfg.export_traces,
                             selection=cfg.export_selection)
    for kind, path in files.items():
        print(f"{kind}: {path}")
    return 0


def cmd_validate(args) -> int:
    cfg = _load(args.config)
    n = len(cfg.points()) * len(cfg.seeds) * len(cfg.algorithms)
    print(f"{cfg.name}: ok ({len(cfg.points())} points x {len(cfg.seeds)} seeds x "
          f"{len(cfg.algorithms)} algorithms = {n} runs), config hash {cfg.config_hash()[:12]}")
    return 0


def cmd_list(args) -> int:
    for name, desc in harness.list_experiments().items():
        print(f"{name:14s} {desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nfbeam", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment and write CSV + manifest")
    p.add_argument("config", help="YAML file or bundled experiment name")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("list-experiments", help="list bundled experiment configs")
    p.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (harness.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
