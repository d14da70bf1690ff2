#!/usr/bin/env python3
"""
Command-line entry point for the drift-entropy engine.
Runs one command from a JSON run document and writes a JSON report.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional, Sequence

from dotenv import load_dotenv

from app.config import (
    COMMANDS,
    ConfigError,
    RunConfig,
    SchemaError,
    apply_overrides,
    load_config,
    parse_config,
)
from app.report import (
    STATUS_OK,
    STATUS_VIOLATION,
    _utcnow_iso,
    error_report,
    exit_code,
    render,
    write_report,
)
from app.runner import run as run_config
from app.settings import EngineSettings
from scaffolding.templates import get_starter_config


logger = logging.getLogger(__name__)

INIT_CONFIG = "init-config"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drift-entropy",
        description=(
            "Estimate Gaussian relative entropy as minimal drift energy and check "
            "the functional inequalities derived from it"
        ),
    )
    parser.add_argument("command", choices=[*COMMANDS, INIT_CONFIG], help="Command to execute")
    parser.add_argument(
        "template",
        nargs="?",
        choices=list(COMMANDS),
        help="For init-config: the command whose starter document is written",
    )
    parser.add_argument("--config", help="Path to the JSON run document")
    parser.add_argument("--seed", type=int, help="Override the document seed")
    parser.add_argument("--paths", type=int, help="Override sde.n_paths")
    parser.add_argument("--steps", type=int, help="Override sde.n_steps")
    parser.add_argument("--out", help="Write the report (or the starter document) to this file")
    parser.add_argument(
        "--dump-paths", action="store_true", help="Also write simulated paths as CSV"
    )
    parser.add_argument("--workers", type=int, help="Threads used for path chunks")
    return parser


def init_config(command: str, out: Optional[str]) -> int:
    document = json.dumps(get_starter_config(command), indent=2)
    if out:
        target = Path(out)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(document + "\n")
        print(f"✅ Wrote starter {command} document to {target}")
    else:
        print(document)
    return 0


def _load(args: argparse.Namespace) -> RunConfig:
    if args.config:
        config = load_config(args.config)
    else:
        config = parse_config(get_starter_config("verify-all"))
    if config.command != args.command:
        raise ConfigError(
            [
                SchemaError(
                    path="$.command",
                    message=f"document is for {config.command!r}, not {args.command!r}",
                )
            ]
        )
    return apply_overrides(
        config,
        seed=args.seed,
        paths=args.paths,
        steps=args.steps,
        out=args.out,
        dump_paths=args.dump_paths,
    )


def print_summary(report: dict[str, Any]) -> None:
    status = report["status"]
    marker = {STATUS_OK: "✅", STATUS_VIOLATION: "⚠️ "}.get(status, "❌")
    print(f"{marker} {report['command']}: {status}")
    for verdict in report["verdicts"]:
        case = verdict.get("details", {}).get("case")
        label = f"{case} / {verdict['name']}" if case else verdict["name"]
        print(
            f"   {label}: {verdict['verdict']} "
            f"(lhs={verdict['lhs']}, rhs={verdict['rhs']}, margin={verdict['margin']})"
        )
    if report.get("error"):
        print(f"   Error: {report['error']}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == INIT_CONFIG:
        if not args.template:
            print("Error: init-config needs the command to write a starter document for")
            return 1
        return init_config(args.template, args.out)
    if args.config is None and args.command != "verify-all":
        print(f"Error: --config is required for {args.command}")
        return 1

    settings = EngineSettings.from_env()
    if args.workers is not None:
        if args.workers < 1:
            print("Error: --workers must be at least 1")
            return 1
        settings = replace(settings, workers=args.workers)
    logging.basicConfig(level=settings.log_level)

    try:
        config = _load(args)
    except (ConfigError, OSError) as error:
        errors = getattr(error, "errors", None) or [error]
        print("❌ Invalid run document:")
        for item in errors:
            print(f"   {item}")
        if args.out:
            message = "; ".join(str(item) for item in errors)
            write_report(error_report(args.command, {}, message, _utcnow_iso()), args.out)
        return 1

    report = run_config(config, settings)
    if config.output is None:
        print(render(report))
    print_summary(report)
    return exit_code(report)


def run() -> None:
    """Synchronous entry point for installed console scripts."""
    load_dotenv()
    sys.exit(main())


if __name__ == "__main__":
    run()
