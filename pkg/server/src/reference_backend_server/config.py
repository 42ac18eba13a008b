"""Server configuration: mode selection, bind address, oracle mixture, hook path.

Settings come from an optional JSON file plus command-line overrides; flags
win. Unknown file keys are errors rather than silently ignored so a typo
cannot masquerade as a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

from .models import DEFAULT_MIXTURE, validate_mixture

MODES = ("stub", "oracle", "hook")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8787
    mode: str = "oracle"
    native_resolution: int = 64
    mixture: tuple[tuple[float, float, float], ...] = DEFAULT_MIXTURE
    hook: str | None = None
    verbose: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.port <= 65535:
            raise ConfigError(f"port {self.port} outside [0, 65535]")
        if self.native_resolution < 1:
            raise ConfigError(f"native_resolution must be >= 1, got {self.native_resolution}")
        if self.mode == "hook" and not self.hook:
            raise ConfigError("hook mode needs a hook path (module.path:attribute)")
        try:
            object.__setattr__(self, "mixture", validate_mixture(self.mixture))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def load_config_file(path: str) -> dict:
    """JSON file -> flat dict of ServerConfig field values."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    known = {f.name for f in fields(ServerConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = dict(raw)
    if "mixture" in values:
        mix = values["mixture"]
        # accept either a bare component list or {"components": [...]} as
        # written by the golden-vector manifest
        if isinstance(mix, dict):
            if set(mix) != {"components"}:
                raise ConfigError(f"mixture object must hold exactly 'components', got {sorted(mix)}")
            mix = mix["components"]
        if not isinstance(mix, list):
            raise ConfigError("mixture must be a list of [weight, mean, std] triples")
        values["mixture"] = tuple(tuple(c) for c in mix)
    return values


def resolve_config(file_values: dict, overrides: dict) -> ServerConfig:
    """File values with non-None command-line overrides applied on top."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ServerConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
