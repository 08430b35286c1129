"""Experiment configuration: TOML/JSON loading and validation."""

from __future__ import annotations

import json
import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]

EXPERIMENT_KINDS = (
    "fluctuation",
    "systematic",
    "localization",
    "homogenization_error",
    "structure",
    "spectral_gap",
    "weight_independence",
)


class ConfigError(ValueError):
    """Raised with the offending key path when a config does not validate."""


@dataclass
class ExperimentConfig:
    kind: str
    d: int
    family: dict
    field: dict = dataclasses.field(default_factory=dict)
    grid: dict = dataclasses.field(default_factory=dict)
    sweep: dict = dataclasses.field(default_factory=dict)
    n_samples: int = 16
    base_seed: int = 0
    tol: float = 1e-9
    out_dir: str = "out"
    options: dict = dataclasses.field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        def need(key, typ):
            if key not in raw:
                raise ConfigError(f"missing required key {key!r}")
            val = raw[key]
            if typ is float and isinstance(val, int):
                val = float(val)
            if not isinstance(val, typ):
                raise ConfigError(f"key {key!r} must be {typ.__name__}, got {type(val).__name__}")
            return val

        kind = need("kind", str)
        if kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"kind {kind!r} not one of {EXPERIMENT_KINDS}")
        d = need("d", int)
        if d not in (1, 2, 3):
            raise ConfigError(f"d must be 1, 2 or 3, got {d}")
        family = need("family", dict)
        if "name" not in family:
            raise ConfigError("family.name is required")
        cfg = cls(
            kind=kind,
            d=d,
            family=family,
            field=raw.get("field", {}),
            grid=raw.get("grid", {}),
            sweep=raw.get("sweep", {}),
            n_samples=int(raw.get("n_samples", 16)),
            base_seed=int(raw.get("base_seed", 0)),
            tol=float(raw.get("tol", 1e-9)),
            out_dir=str(raw.get("out_dir", "out")),
            options=raw.get("options", {}),
        )
        if cfg.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {cfg.n_samples}")
        if not 0 < cfg.tol < 1:
            raise ConfigError(f"tol must lie in (0, 1), got {cfg.tol}")
        eps = cfg.field.get("epsilon")
        if eps is not None and not eps > 0:
            raise ConfigError(f"field.epsilon must be positive, got {eps}")
        return cfg


def load_config(path) -> ExperimentConfig:
    """Load an experiment config from a ``.toml`` or ``.json`` file."""
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    elif path.suffix == ".json":
        raw = json.loads(path.read_text())
    else:
        raise ConfigError(f"unsupported config format {path.suffix!r} (use .toml or .json)")
    try:
        return ExperimentConfig.from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
