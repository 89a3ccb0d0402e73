"""Configuration, command dispatch and report emission."""

from .config import ConfigError, RunConfig, load_config, parse_config
from .emit import ReportBundle, emit

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "ReportBundle", "emit"]
