from __future__ import annotations

from .app import build_parser, main
from .config import RunConfig, parse_run_config, read_run_config, write_run_config

__all__ = ["RunConfig", "build_parser", "main", "parse_run_config", "read_run_config", "write_run_config"]
