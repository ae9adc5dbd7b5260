"""Command-line entry point: ``reservecert <stage> --config run.yaml --out DIR``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError, ReserveCertError
from .pipeline import Pipeline, RunConfig, load_config, render_report, write_json

SUBCOMMANDS = ("run", "ingest", "fit-quantiles", "replay", "decide", "diagnose-support",
               "segment-safety", "transfer", "bootstrap", "synth", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reservecert", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report", help="YAML or JSON run config")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--workers", type=int, help="worker threads (default from environment)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        mode = p.add_mutually_exclusive_group()
        mode.add_argument("--strict", dest="strict", action="store_true", default=None,
                          help="reject the whole log on the first bad row (default)")
        mode.add_argument("--lenient", dest="strict", action="store_false",
                          help="drop and count bad rows")
    return parser


def _error(exc: ReserveCertError, stage: str, out) -> int:
    record = exc.to_record()
    if record["stage"] == "core":
        record["stage"] = stage
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            write_json(record, out / "error.json")
        except OSError:
            pass
    return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    pipe = None
    try:
        if args.command == "report" and not args.config:
            if not args.out:
                raise ConfigError("report needs --out or --config")
            print(render_report(args.out), end="")
            return 0
        config: RunConfig = load_config(args.config, seed=args.seed, strict=args.strict)
        pipe = Pipeline(config, args.out, args.workers)
        result = pipe.stage(args.command)()
        if args.command == "report":
            print(result, end="")
        return 0
    except ReserveCertError as exc:
        return _error(exc, args.command, pipe.out if pipe else None)


if __name__ == "__main__":
    sys.exit(main())
