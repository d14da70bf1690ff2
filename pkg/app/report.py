"""Report documents: envelope, verdict roll-up and JSON output."""

from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from tools.frames import InequalityReport, Verdict


REPORT_SCHEMA_VERSION = "1"
STATUS_OK = "ok"
STATUS_VIOLATION = "violation"
STATUS_ERROR = "error"

EXIT_CODES = {STATUS_OK: 0, STATUS_VIOLATION: 2, STATUS_ERROR: 1}


def _utcnow_iso() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


def jsonable(value: Any) -> Any:
    """Plain JSON types; numpy values unwrapped, non-finite floats spelled out."""
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        return number if math.isfinite(number) else str(number)
    if hasattr(value, "to_dict"):
        return jsonable(value.to_dict())
    return value


def verdict_entries(reports: Iterable[InequalityReport]) -> list[dict[str, Any]]:
    return [jsonable(report.to_dict()) for report in reports]


def status_for(reports: Iterable[InequalityReport]) -> str:
    if any(report.verdict is Verdict.VIOLATION_FLAGGED for report in reports):
        return STATUS_VIOLATION
    return STATUS_OK


def build_report(
    *,
    command: str,
    config_echo: dict[str, Any],
    results: dict[str, Any],
    verdicts: list[InequalityReport],
    started_at: str,
    wall_clock_seconds: float,
    status: Optional[str] = None,
    error: Optional[str] = None,
) -> dict[str, Any]:
    """Assemble the report document; only ``timing`` varies between identical runs."""
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": command,
        "status": status or status_for(verdicts),
        "config": jsonable(config_echo),
        "results": jsonable(results),
        "verdicts": verdict_entries(verdicts),
        "error": error,
        "timing": {"started_at": started_at, "wall_clock_seconds": wall_clock_seconds},
    }


def error_report(command: str, config_echo: dict[str, Any], message: str, started_at: str) -> dict[str, Any]:
    return build_report(
        command=command,
        config_echo=config_echo,
        results={},
        verdicts=[],
        started_at=started_at,
        wall_clock_seconds=0.0,
        status=STATUS_ERROR,
        error=message,
    )


def exit_code(report: dict[str, Any]) -> int:
    return EXIT_CODES.get(report.get("status", STATUS_ERROR), 1)


def render(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def write_report(report: dict[str, Any], path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(render(report) + "\n")
    return target


def without_timing(report: dict[str, Any]) -> dict[str, Any]:
    return {key: value for key, value in report.items() if key != "timing"}
