"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError
from .config import KINDS, parse_config, parse_value, tokenize
from .runner import compare_runs, format_ranking, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # command-line misuse is a configuration error, not a runtime abort
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="annealgan", description="Annealed functional-gradient GAN experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        s = sub.add_parser(kind, help=f"run a {kind} experiment")
        s.add_argument("--config", help="config file (run.kind may be omitted)")
        s.add_argument("--seed", help="comma-separated seeds, overriding run.seeds")
        s.add_argument("--out", help="output directory, overriding run.out")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        s.add_argument("--quiet", action="store_true")
    c = sub.add_parser("compare", help="rank finished runs by a final metric")
    c.add_argument("runs", nargs="+", help="run directories (or their metrics.csv)")
    c.add_argument("--metric", default="frechet")
    c.add_argument("--aggregation", default="median", choices=("median", "min"))
    c.add_argument("--config", help=argparse.SUPPRESS)
    c.add_argument("--seed", help=argparse.SUPPRESS)
    c.add_argument("--out", help="write the table to this file as well")
    c.add_argument("--quiet", action="store_true")
    return p


def _overrides(args) -> dict:
    out = {"run.kind": args.command}
    if args.seed is not None:
        out["run.seeds"] = parse_value(args.seed, key="run.seeds")
    if args.out is not None:
        out["run.out"] = args.out
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = parse_value(value, key=key.strip())
    return out


def _run_kind(args) -> int:
    text = ""
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    declared = {k: v for k, v, *_ in tokenize(text)}.get("run.kind")
    if declared is not None and declared != args.command:
        raise ConfigError(f"config declares kind {declared!r} but subcommand is {args.command!r}",
                          key="run.kind")
    cfg = parse_config(text, _overrides(args))
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    outcome = run_experiment(cfg, args.out, log)
    if not args.quiet:
        print(outcome.out_dir)
        for seed, err in outcome.errors.items():
            print(f"seed {seed} aborted: {err}", file=sys.stderr)
    return EXIT_OK if outcome.status == 0 else EXIT_RUNTIME


def _run_compare(args) -> int:
    table = compare_runs(args.runs, args.metric, args.aggregation)
    text = format_ranking(table, args.metric)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if not args.quiet:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "compare":
            return _run_compare(args)
        return _run_kind(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, FloatingPointError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
