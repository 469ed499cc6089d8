"""Flat ``key=value`` run configuration with environment and CLI overrides.

Precedence, lowest first: TrainConfig defaults, dataset preset, config file,
``ALIGNGROUP_<KEY>`` environment variables, command-line flags. A value with
commas (``tau=0.2,0.4``) declares a grid; :func:`expand_grid` yields one
TrainConfig per grid point.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import fields

from .params import TrainConfig

ENV_PREFIX = "ALIGNGROUP_"

ALIASES = {
    "L": "layers",
    "lambda": "lambda_align",
    "infonce": "infonce_mode",
    "mode": "bpr_mode",
    "interrl": "interrl_enabled",
    "eval_negatives": "eval_neg_count",
}

PRESETS = {
    "mafengwo": {"layers": "3", "tau": "0.2", "lambda_align": "0.1"},
    "camra2011": {"layers": "3", "tau": "0.8", "lambda_align": "0.1"},
}

_TYPES = {f.name: f.type for f in fields(TrainConfig)}


class ConfigError(ValueError):
    pass


def canonical_key(key: str) -> str:
    key = key.strip()
    key = ALIASES.get(key, key)
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def parse_value(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    if kind in ("bool", bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind in ("int", int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def read_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            out[canonical_key(key)] = value.strip()
    return out


def env_overrides(environ=None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            if key in _TYPES:
                out[key] = value
    return out


def merge_layers(*layers: dict[str, str]) -> dict[str, str]:
    merged: dict[str, str] = {}
    for layer in layers:
        for k, v in layer.items():
            if v is not None:
                merged[canonical_key(k)] = str(v)
    return merged


def expand_grid(raw: dict[str, str]) -> list[TrainConfig]:
    """One TrainConfig per point of the cartesian product of comma-listed values."""
    keys = sorted(raw)
    choices = [[parse_value(k, part) for part in raw[k].split(",") if part.strip()] for k in keys]
    configs = []
    for combo in itertools.product(*choices):
        try:
            configs.append(TrainConfig(**dict(zip(keys, combo))))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return configs


def grid_axes(raw: dict[str, str]) -> list[str]:
    return sorted(k for k, v in raw.items() if "," in v)


def write_config(config: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in config.to_dict().items():
            fh.write(f"{k}={v}\n")
