"""Flat ``key = value`` experiment configuration files.

Keys are the :class:`SystemConfig` field names plus a handful of
experiment keys (``runs``, ``phase_mode``, ``redraw_pilots``,
``estimators``, ``values``, ``profile``). ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from ..channel_model import SystemConfig
from ..errors import ConfigError

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}

EXPERIMENT_KEYS = {
    "runs": int,
    "phase_mode": str,
    "redraw_pilots": bool,
    "estimators": str,
    "values": str,
    "profile": str,
}


def _field_types() -> dict:
    hints = {}
    for f in dataclasses.fields(SystemConfig):
        hints[f.name] = {"int": int, "float": float, "bool": bool}[
            f.type if isinstance(f.type, str) else f.type.__name__]
    return hints


def _coerce(key: str, raw: str, typ):
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
    return raw


def parse_config(text: str, source: str = "<string>") -> dict:
    """Parse config text into ``{"system": {...}, "experiment": {...}}``."""
    types = _field_types()
    system, experiment = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in types:
            system[key] = _coerce(key, raw, types[key])
        elif key in EXPERIMENT_KEYS:
            experiment[key] = _coerce(key, raw, EXPERIMENT_KEYS[key])
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    return {"system": system, "experiment": experiment}


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))


def dump_config(cfg: SystemConfig, **experiment) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)]
    lines += [f"{k} = {v}" for k, v in experiment.items()]
    return "\n".join(lines) + "\n"
