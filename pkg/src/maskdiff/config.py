"""Flat key-value config files with one section per concern.

INI syntax via configparser; every key is validated against a fixed schema
and unknown sections or keys are hard errors. CLI flags override config
values, which override the built-in defaults.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_str_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "data": {
        "kind": str,
        "num_positions": int,
        "num_categories": int,
        "correlation_strength": float,
        "seed": int,
    },
    "schedule": {
        "family": str,
        "steps": int,
        "epsilon": float,
        "chunk_size": int,
    },
    "sampler": {
        "mode": str,
        "beta": float,
        "num_samples": int,
        "seed": int,
    },
    "fit": {
        "smoothing": float,
    },
    "sweep": {
        "modes": _parse_str_list,
        "steps_list": _parse_int_list,
        "beta_list": _parse_float_list,
        "emit_timings": _parse_bool,
    },
}


def load_config(path: str | Path) -> dict[str, dict[str, Any]]:
    """Parse and validate a config file into {section: {key: value}}."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        read = parser.read(str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not read:
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        out[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                out[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc
    return out


def config_get(
    cfg: dict[str, dict[str, Any]], section: str, key: str, fallback: Any
) -> Any:
    return cfg.get(section, {}).get(key, fallback)
