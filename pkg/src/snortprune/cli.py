"""Command-line entry point.

Exit codes: 0 on success, 1 for bad input (unparseable rules, traffic,
blocklist or config), 2 when evaluation fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .frontier import EvaluationError
from .metrics import MetricsError
from .mutation import MaskError, PolicyViolationError, TrivialRuleError
from .pipeline import (
    ConfigError,
    PipelineConfig,
    cmd_explore,
    cmd_parse,
    cmd_report,
    cmd_run,
    crosscheck,
)
from .rules import DuplicateSidError, RuleSyntaxError
from .traffic import BlocklistFormatError, TrafficFormatError

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_EVAL = 2

INPUT_ERRORS = (
    RuleSyntaxError,
    DuplicateSidError,
    TrafficFormatError,
    BlocklistFormatError,
    ConfigError,
    MaskError,
    PolicyViolationError,
    TrivialRuleError,
    FileNotFoundError,
    json.JSONDecodeError,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    # report and verify ignore --rules, but accept it so one flag set fits all
    p.add_argument("--config", help="JSON pipeline config; flags override it")
    for name in ("rules", "traffic", "blocklist"):
        p.add_argument(f"--{name}", dest=f"{name}_path")
    p.add_argument("--output-dir")
    p.add_argument("--cache-dir", help="overridden by $SNORTPRUNE_CACHE_DIR")
    p.add_argument("--label-policy", choices=["paper_inverted", "blocklist_malicious"])
    p.add_argument("--unevaluable", choices=["permissive", "strict"])
    p.add_argument("--exclude", action="append", metavar="KEYWORD",
                   help="extra keyword that is never removed (repeatable)")
    p.add_argument("--no-dependency-check", dest="dependency_check",
                   action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snortprune",
        description="Explore option-removed Snort rule variants against labelled traffic.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="rule statistics as JSON")
    p.add_argument("--rules", dest="rules_path", required=True)
    p.add_argument("--exclude", action="append", metavar="KEYWORD")
    p.add_argument("--output", help="also write the report here")

    p = sub.add_parser("run", help="evaluate one configuration")
    _add_common(p)
    p.add_argument("--variant", default="original",
                   help="original | <keyword> | content@multi | a+b | mask:<file.json>")

    p = sub.add_parser("explore", help="iterative frontier exploration")
    _add_common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--composition", choices=["per_configuration", "cross_frontier"])
    p.add_argument("--write-config", help="write the effective config as JSON and continue")

    p = sub.add_parser("report", help="rebuild tables from cached results")
    _add_common(p)

    p = sub.add_parser("verify", help="cross-check the f1 table against alert files")
    _add_common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig()
    if getattr(args, "config", None):
        config = PipelineConfig.from_json(Path(args.config).read_text())
    for f in fields(PipelineConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(config, f.name, value)
    if getattr(args, "exclude", None):
        config.excluded_keywords = sorted(set(config.excluded_keywords) | set(args.exclude))
    return config


def _run(args: argparse.Namespace) -> int:
    if args.command == "parse":
        config = resolve_config(args)
        report = cmd_parse(args.rules_path, config.policy)
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
        if args.output:
            Path(args.output).write_text(text)
        sys.stdout.write(text)
        return EXIT_OK

    config = resolve_config(args)
    if args.command == "run":
        record = cmd_run(config, args.variant)
        sys.stdout.write(json.dumps(record["row"], sort_keys=True) + "\n")
    elif args.command == "explore":
        if args.write_config:
            Path(args.write_config).write_text(config.to_json())
        state = cmd_explore(config)
        print(f"iterations: {state.iteration}  stop: {state.stop_reason}")
        print("area history: " + ", ".join(f"{a:.6f}" for a in state.area_history))
        print(f"best configuration: {state.best_configuration()}")
        print(f"artifacts in {config.output_dir}")
    elif args.command == "report":
        summary = cmd_report(config)
        print("area history: " + ", ".join(f"{a:.6f}" for a in summary["areas"]))
    elif args.command == "verify":
        config.validate(need=("traffic_path", "blocklist_path"))
        problems = crosscheck(config)
        for line in problems:
            print(line)
        if problems:
            return EXIT_EVAL
        print("f1 table consistent with alert files")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except INPUT_ERRORS as exc:
        print(f"snortprune: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EvaluationError, MetricsError) as exc:
        print(f"snortprune: evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
