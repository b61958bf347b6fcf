"""Declarative experiment configuration (TOML) with strict validation."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "jobs": 1,
    "temperatures": [0.1, 0.5],
    "grid": {"lo": -1.5, "hi": 1.5, "n": 12},
    "potential": {"franz_alpha": 1.0},
    "simulate": {
        "process": "ins",
        "a": 0.0,
        "horizon": 1000.0,
        "replicas": 4,
        "checkpoints": 6,
    },
    "tables": {
        "alphas": [1.0, 0.97, 0.95, 0.90, 0.85],
        "deltas": [0.05, 0.10, 0.15, 0.20],
        "tol": 1e-10,
    },
    "value_function": {"n": 50, "temperature": 0.1, "delta": 0.1, "tol": 1e-10},
    "diagnose": {"w1": [0.3, 0.4, 0.45, 0.5, 0.55, 0.6, 0.7], "tol": 1e-10},
    "rate": {"kind": "J"},
}

# keys that may be present without a default
OPTIONAL = {
    "potential": {"values"},
    "simulate": {"initial"},
    "rate": {"measure", "measure_file"},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        allowed = set(base) | OPTIONAL.get(path.rstrip("."), set())
        if key not in allowed:
            raise ConfigError(f"unknown key '{where}'")
        if isinstance(base.get(key), dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a table")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def _num(cfg, path, *, positive=False, integer=False, lo=None, hi=None, hi_open=False):
    node = cfg
    for part in path.split("."):
        node = node[part]
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"'{path}' must be a number, got {node!r}")
    if not math.isfinite(node):
        raise ConfigError(f"'{path}' must be finite")
    if integer and int(node) != node:
        raise ConfigError(f"'{path}' must be an integer")
    if positive and node <= 0:
        raise ConfigError(f"'{path}' must be positive, got {node}")
    if lo is not None and node < lo:
        raise ConfigError(f"'{path}' must be >= {lo}, got {node}")
    if hi is not None and (node >= hi if hi_open else node > hi):
        raise ConfigError(f"'{path}' must be {'<' if hi_open else '<='} {hi}, got {node}")
    return node


def _list(cfg, section, key, check):
    values = cfg[section][key]
    if not isinstance(values, list) or not values:
        raise ConfigError(f"'{section}.{key}' must be a non-empty list")
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"'{section}.{key}[{i}]' must be a finite number")
        msg = check(v)
        if msg:
            raise ConfigError(f"'{section}.{key}[{i}]' {msg}, got {v}")
    if len(set(values)) != len(values):
        raise ConfigError(f"'{section}.{key}' has duplicate entries")


def validate(cfg: dict) -> dict:
    """Check every field against the solvers' preconditions; returns ``cfg``."""
    _num(cfg, "seed", integer=True, lo=0, hi=2**64 - 1)
    _num(cfg, "jobs", integer=True, lo=1)
    temps = cfg["temperatures"]
    if not isinstance(temps, list) or not temps:
        raise ConfigError("'temperatures' must be a non-empty list")
    for i, t in enumerate(temps):
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not t > 0 or not math.isfinite(t):
            raise ConfigError(f"'temperatures[{i}]' must be a positive finite number, got {t!r}")
    _num(cfg, "grid.lo")
    _num(cfg, "grid.hi")
    if not cfg["grid"]["lo"] < cfg["grid"]["hi"]:
        raise ConfigError("'grid.lo' must be below 'grid.hi'")
    _num(cfg, "grid.n", integer=True, lo=2)
    pot = cfg["potential"]
    if "values" in pot:
        vals = pot["values"]
        if not isinstance(vals, list) or len(vals) != cfg["grid"]["n"]:
            raise ConfigError("'potential.values' must list one energy per grid point")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in vals):
            raise ConfigError("'potential.values' entries must be finite numbers")
    else:
        _num(cfg, "potential.franz_alpha", lo=0, hi=1)
        if pot["franz_alpha"] <= 0:
            raise ConfigError("'potential.franz_alpha' must lie in (0, 1]")

    sim = cfg["simulate"]
    if sim["process"] not in ("ins", "pt"):
        raise ConfigError(f"'simulate.process' must be 'ins' or 'pt', got {sim['process']!r}")
    _num(cfg, "simulate.a", lo=0)
    _num(cfg, "simulate.horizon", positive=True)
    _num(cfg, "simulate.replicas", integer=True, lo=1)
    _num(cfg, "simulate.checkpoints", integer=True, lo=1, hi=60)
    if "initial" in sim:
        init = sim["initial"]
        if not isinstance(init, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in init):
            raise ConfigError("'simulate.initial' must be a list of grid indices")
        if len(init) != len(temps) or not all(0 <= i < cfg["grid"]["n"] for i in init):
            raise ConfigError("'simulate.initial' must give one valid grid index per temperature")

    _list(cfg, "tables", "alphas", lambda v: None if 0 < v <= 1 else "must lie in (0, 1]")
    _list(cfg, "tables", "deltas", lambda v: None if 0 <= v < 1 else "must lie in [0, 1)")
    _num(cfg, "tables.tol", positive=True)

    _num(cfg, "value_function.n", integer=True, lo=2)
    _num(cfg, "value_function.temperature", positive=True)
    _num(cfg, "value_function.delta", lo=0, hi=1, hi_open=True)
    _num(cfg, "value_function.tol", positive=True)

    _list(cfg, "diagnose", "w1", lambda v: None if 0 < v < 1 else "must lie in (0, 1)")
    _num(cfg, "diagnose.tol", positive=True)

    rate = cfg["rate"]
    if rate["kind"] not in ("J", "I"):
        raise ConfigError(f"'rate.kind' must be 'J' or 'I', got {rate['kind']!r}")
    if "measure" in rate and "measure_file" in rate:
        raise ConfigError("give at most one of 'rate.measure' and 'rate.measure_file'")
    return cfg


def parse_override(text: str) -> tuple[list, Any]:
    """``section.key=value`` with ``value`` read as a TOML literal (bare words as strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    path = [p.strip() for p in key.strip().split(".")]
    if not all(path):
        raise ConfigError(f"bad override key {key!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return path, value


def load_config(path=None, overrides=()) -> dict:
    """Read, merge with defaults, apply overrides and validate."""
    user: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for keys, value in overrides:
        node = user
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {'.'.join(keys)} crosses a non-table value")
        node[keys[-1]] = value
    return validate(_merge(DEFAULTS, user))


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
