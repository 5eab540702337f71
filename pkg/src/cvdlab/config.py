"""Layered key-value configuration with dotted-path command-line overrides.

One file (YAML; JSON works too since YAML subsumes it) covers every stage.
Values merge over the documented defaults below, and `--set a.b.c=value`
overrides land on top. Keys outside the documented tree are rejected,
except under `backend`, which is a backend-specific passthrough.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import yaml

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "backend": {
        # passthrough options for the registered backend factory
        "name": "toy",
        "dim": 256,
        "seed": 0,
        "rank": 16,
        "alpha": 8.0,
    },
    "data": {
        "train": None,
        "valid": None,
        "test": None,
    },
    "prepare": {
        "input": None,
        "format": "csv",
        "delimiter": ",",
        "origin": None,
        "columns": {"code": "code", "label": "label", "id": None, "cwe": None, "split": None},
        "ratios": [0.90, 0.05, 0.05],
        "balance": {"train": True, "valid": True, "test": True},
    },
    "train": {
        "epochs": 4,
        "batch_size": 16,
        "learning_rate": 2e-4,
        "optimizer": "paged_adamw_32bit",
    },
    "tt": {
        "epochs": 1,
        "batch_size": None,  # None = the retrieval depth k
        "learning_rate": 2e-4,
    },
    "retrieval": {"k": 6},
    "eval": {"unparseable_policy": "exclude"},
    "projection": {"perplexity": 30.0, "iterations": 1000},
    "plots": {"enabled": True},
}

# subtrees whose keys are not validated against DEFAULTS
_OPEN_SUBTREES = ("backend",)


def _validate_keys(cfg: Mapping, defaults: Mapping, prefix: str = "") -> None:
    for key, value in cfg.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            known = ", ".join(sorted(f"{prefix}{k}" for k in defaults))
            raise ValueError(f"unknown config key {path!r}; documented keys here: {known}")
        if path in _OPEN_SUBTREES:
            continue
        if isinstance(defaults[key], dict) and isinstance(value, Mapping):
            _validate_keys(value, defaults[key], prefix=f"{path}.")


def _deep_merge(base: dict, overlay: Mapping) -> dict:
    merged = dict(base)
    for key, value in overlay.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value) if isinstance(value, (dict, list)) else value
    return merged


def load_config(path: str | Path | None = None) -> dict:
    """Defaults, overlaid with the given config file when provided."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        loaded = yaml.safe_load(fh)
    if loaded is None:
        return cfg
    if not isinstance(loaded, dict):
        raise ValueError(f"config file {path.name} must hold a key-value mapping")
    _validate_keys(loaded, DEFAULTS)
    return _deep_merge(cfg, loaded)


def apply_overrides(cfg: dict, assignments: list[str]) -> dict:
    """Apply `key.path=value` overrides; values are parsed as YAML scalars."""
    cfg = copy.deepcopy(cfg)
    for assignment in assignments:
        if "=" not in assignment:
            raise ValueError(f"override {assignment!r} must look like key.path=value")
        raw_key, raw_value = assignment.split("=", 1)
        keys = raw_key.strip().split(".")
        if not all(keys):
            raise ValueError(f"override key {raw_key!r} is malformed")
        _validate_keys(_nest(keys), DEFAULTS)
        node = cfg
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ValueError(f"override {raw_key!r} descends through a non-mapping value")
        node[keys[-1]] = yaml.safe_load(raw_value)
    return cfg


def _nest(keys: list[str]) -> dict:
    out: dict = {}
    node = out
    for key in keys[:-1]:
        node[key] = {}
        node = node[key]
    node[keys[-1]] = None
    return out


def config_fingerprint(cfg: Mapping) -> str:
    """Stable content hash of a configuration tree."""
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode("utf-8")).hexdigest()
