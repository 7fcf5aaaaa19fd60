"""Command line entry point: ``uwauth run <config>`` and ``uwauth validate <config>``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigErrors, read_config
from .exceptions import ConfigurationError
from .runner import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage errors are config errors (exit 1); exit 2 is reserved for partial failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="uwauth", description="Cooperative channel-feature authentication sweeps.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run the sweep described by a config file")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides the config's 'output')")
    run.add_argument("--jobs", type=int, default=1, help="worker processes, one (alpha, seed) dataset each")
    run.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
    run.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    val = sub.add_parser("validate", help="check a config file without running it")
    val.add_argument("config")
    return p


def _report(path, diags, stream):
    for d in diags:
        print(d.format(path), file=stream)


def cmd_validate(args) -> int:
    try:
        cfg, diags = read_config(args.config)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _report(args.config, diags, sys.stderr)
    if cfg is None:
        n = sum(d.level == "error" for d in diags)
        print(f"{args.config}: {n} error(s)", file=sys.stderr)
        return EXIT_CONFIG
    n_cells = len(cfg.cells()) * len(cfg.alphas) * len(cfg.seeds)
    print(f"{args.config}: ok ({n_cells} cells)")
    return EXIT_OK


def cmd_run(args) -> int:
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg, diags = read_config(args.config)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _report(args.config, diags, sys.stderr)
    if cfg is None:
        return EXIT_CONFIG
    summary = run_experiment(cfg, out_dir=args.out, jobs=args.jobs, seed_offset=args.seed_offset)
    if summary.failures:
        print(f"{len(summary.failures)} cell(s) failed; see {summary.out_dir}/failures.csv", file=sys.stderr)
    print(summary.results_csv)
    return summary.exit_code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return cmd_run(args) if args.command == "run" else cmd_validate(args)
    except ConfigErrors as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
