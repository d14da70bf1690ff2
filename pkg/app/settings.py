"""Engine defaults read from the environment (.env supported through the CLI)."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

from tools.pathsim import DEFAULT_CHUNK_SIZE, DEFAULT_PATHS, DEFAULT_STEPS


logger = logging.getLogger(__name__)

DEFAULT_WORKERS = 1
DEFAULT_LOG_LEVEL = "WARNING"


def _int_from_env(name: str, default: int, minimum: int = 1) -> int:
    raw = (os.getenv(name) or "").strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning("Ignoring %s=%r: not an integer", name, raw)
        return default
    if value < minimum:
        logger.warning("Ignoring %s=%s: must be at least %s", name, value, minimum)
        return default
    return value


@dataclass(frozen=True)
class EngineSettings:
    """SDE defaults, parallelism and log level for one process."""

    n_steps: int = DEFAULT_STEPS
    n_paths: int = DEFAULT_PATHS
    workers: int = DEFAULT_WORKERS
    chunk_size: int = DEFAULT_CHUNK_SIZE
    log_level: str = DEFAULT_LOG_LEVEL

    @classmethod
    def from_env(cls) -> EngineSettings:
        log_level = (os.getenv("DRIFT_ENTROPY_LOG_LEVEL") or DEFAULT_LOG_LEVEL).strip().upper()
        if not isinstance(logging.getLevelName(log_level), int):
            logger.warning("Unknown log level %r; using %s", log_level, DEFAULT_LOG_LEVEL)
            log_level = DEFAULT_LOG_LEVEL
        return cls(
            n_steps=_int_from_env("DRIFT_ENTROPY_STEPS", DEFAULT_STEPS, minimum=2),
            n_paths=_int_from_env("DRIFT_ENTROPY_PATHS", DEFAULT_PATHS),
            workers=_int_from_env("DRIFT_ENTROPY_WORKERS", DEFAULT_WORKERS),
            chunk_size=_int_from_env("DRIFT_ENTROPY_CHUNK_SIZE", DEFAULT_CHUNK_SIZE),
            log_level=log_level,
        )
