"""Run configuration: defaults, file loading, overrides and validation."""

from .settings import (
    DEFAULT_MENU,
    RunConfig,
    create_default_settings,
    load_run_config,
    parse_override,
)

__all__ = [
    "DEFAULT_MENU",
    "RunConfig",
    "create_default_settings",
    "load_run_config",
    "parse_override",
]
