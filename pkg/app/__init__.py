"""Orchestration for the drift-entropy engine: settings, run documents, dispatch and reports."""

from .cli import main
from .config import ConfigError, RunConfig, SchemaError, load_config, parse_config
from .runner import run

__all__ = [
    "ConfigError",
    "RunConfig",
    "SchemaError",
    "load_config",
    "main",
    "parse_config",
    "run",
]
