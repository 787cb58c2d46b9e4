"""Command-line entry point.

Exit codes: 0 on success, 2 for configuration errors, 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .data import IdxFormatError, generate_synthetic, write_csv
from .harness import (RunError, load_config_dir, load_result, report,
                      run_experiment, run_sweep)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.output_dir:
        config = config.with_values(output_dir=args.output_dir)
    if args.workers:
        config = config.with_values(run__workers=args.workers)
    result = run_experiment(config)
    out = Path(config["output_dir"])
    report(result, out)
    print(out / config.config_hash)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    configs = load_config_dir(args.config_dir)
    out = args.output_dir or configs[0]["output_dir"]
    run_sweep(configs, workers=args.workers or 1, output_dir=out)
    print(out)
    return EXIT_OK


def _cmd_report(args) -> int:
    summary = report(load_result(args.result_dir), args.result_dir)
    json.dump(summary["means"], sys.stdout, indent=2)
    print()
    return EXIT_OK


def _cmd_synth(args) -> int:
    ds = generate_synthetic(args.samples, args.features, args.classes, args.sep, args.seed)
    write_csv(ds, args.out)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmia", description="Federated learning simulator with membership-inference audits")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("config", type=Path)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run every *.cfg in a directory")
    p.add_argument("config_dir", type=Path)
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--workers", type=int, help="configs run concurrently")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="rebuild summary.json and figure CSVs")
    p.add_argument("result_dir", type=Path)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("synth", help="write a synthetic Gaussian-blob dataset as CSV")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--features", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--sep", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, IdxFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, ValueError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
