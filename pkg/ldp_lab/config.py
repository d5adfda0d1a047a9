"""Experiment configs: one JSON file per experiment, flattened to dotted keys."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import pandas as pd

from ldp_lab.errors import ConfigInvalid

# ============================
# SCHEMA
# ============================

KINDS = (
    "conjugate",
    "deviation-integral",
    "simulate",
    "verify-local",
    "verify-fdd",
    "verify-functional",
    "varadhan",
    "tightness",
    "verify-interval",
    "uniformity",
)

VERIFY_KINDS = ("verify-local", "verify-fdd", "verify-functional", "verify-interval")

# a key ending in "*" matches any key under that prefix
REQUIRED = {
    "conjugate": ("fundamental.family",),
    "deviation-integral": ("rate.family", "path*"),
    "simulate": ("model.family", "T", "grid_step"),
    "verify-local": ("model.family", "beta", "T_grid", "n"),
    "verify-fdd": ("model.family", "betas", "weights", "T_grid", "n"),
    "verify-functional": ("model.family", "path*", "T_grid", "n"),
    "varadhan": ("model.family", "phi.kind", "T", "n"),
    "tightness": ("model.family", "N_targets", "T_grid", "n"),
    "verify-interval": ("model.family", "lo", "hi", "T_grid", "n"),
    "uniformity": ("model.family", "beta", "T", "n", "alpha", "eta"),
}

MIN_N = 100
FILE_KEYS = ("path_file", "fundamental.parameters.path")


def flatten(raw: Mapping) -> dict[str, Any]:
    """Nested mapping -> {"a.b.c": value}; lists stay values."""
    if not raw:
        return {}
    return pd.json_normalize(dict(raw), sep=".").to_dict(orient="records")[0]


def unflatten(flat: Mapping[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in flat.items():
        node = out
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    output_dir: str
    params: Mapping[str, Any] = field(default_factory=dict)
    workers: int = 1
    base_dir: str = "."

    def get(self, key: str, default: Any = None) -> Any:
        return self.params.get(key, default)

    def section(self, prefix: str) -> dict[str, Any]:
        head = prefix + "."
        return unflatten({k[len(head):]: v for k, v in self.params.items() if k.startswith(head)})

    def resolve(self, relpath: str) -> Path:
        p = Path(relpath)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def config_hash(self) -> str:
        canonical = json.dumps({"kind": self.kind, "seed": self.seed, "params": dict(self.params)},
                               sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, seed: int | None = None, workers: int | None = None,
                       output_dir: str | None = None) -> "ExperimentConfig":
        cfg = replace(
            self,
            seed=self.seed if seed is None else int(seed),
            workers=self.workers if workers is None else int(workers),
            output_dir=self.output_dir if output_dir is None else str(output_dir),
        )
        validate(cfg)
        return cfg


# ============================
# VALIDATION
# ============================

def _has(params: Mapping[str, Any], key: str) -> bool:
    if key.endswith("*"):
        stem = key[:-1]
        return any(k == stem or k.startswith(stem) for k in params)
    return key in params


def validate(cfg: ExperimentConfig) -> None:
    if cfg.kind not in KINDS:
        raise ConfigInvalid(f"unknown experiment kind {cfg.kind!r}")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigInvalid("seed must be a nonnegative integer")
    if cfg.workers < 1:
        raise ConfigInvalid("workers must be >= 1")
    missing = [k.rstrip("*") for k in REQUIRED[cfg.kind] if not _has(cfg.params, k)]
    if missing:
        raise ConfigInvalid(f"{cfg.kind}: missing {', '.join(missing)}")

    p = cfg.params
    if "n" in p and not (_positive(p["n"]) and float(p["n"]).is_integer() and p["n"] >= MIN_N):
        raise ConfigInvalid(f"n must be an integer >= {MIN_N}, got {p['n']!r}")
    for key in ("T", "grid_step"):
        if key in p and not _positive(p[key]):
            raise ConfigInvalid(f"{key} must be positive")
    if "T_grid" in p:
        grid = p["T_grid"]
        if not isinstance(grid, list) or not grid or not all(_positive(t) for t in grid):
            raise ConfigInvalid("T_grid must be a nonempty list of positive numbers")
    if "lo" in p and "hi" in p and not float(p["lo"]) < float(p["hi"]):
        raise ConfigInvalid("need lo < hi")
    for key in FILE_KEYS:
        if key in p and not cfg.resolve(str(p[key])).is_file():
            raise ConfigInvalid(f"{key}: file {p[key]!r} does not exist")


def _positive(x: Any) -> bool:
    try:
        return math.isfinite(float(x)) and float(x) > 0
    except (TypeError, ValueError):
        return False


# ============================
# LOADING
# ============================

def config_from_mapping(raw: Mapping, base_dir: str | Path = ".") -> ExperimentConfig:
    raw = dict(raw)
    if "kind" not in raw:
        raise ConfigInvalid("config needs a 'kind'")
    if "seed" not in raw:
        raise ConfigInvalid("config needs an explicit 'seed'")
    kind = str(raw.pop("kind"))
    seed = raw.pop("seed")
    output_dir = str(raw.pop("output_dir", "runs"))
    workers = raw.pop("workers", 1)
    params = flatten(raw)
    cfg = ExperimentConfig(kind, seed, output_dir, params, workers, str(base_dir))
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigInvalid(f"config {path} not found") from e
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a JSON object")
    return config_from_mapping(raw, path.parent)
