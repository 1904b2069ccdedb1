"""Flat key-value configuration files.

Syntax: one ``key = value`` pair per line; ``#`` starts a comment; blank
lines are ignored. Command-line flags override file values, and the run
manifest records the merged result. See README for the key schema.
"""

from __future__ import annotations

from dataclasses import replace

from .corpus import BatchConfig
from .errors import ConfigError
from .model import (
    OEST_ENCODER_DIM,
    PLAT_ENCODER_DIM,
    ArchConfig,
    DropoutConfig,
)
from .training import TrainConfig


def parse_config_file(path: str) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    out: dict[str, str] = {}
    for no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    try:
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"expected a number, got {value!r}") from None
    return value


def _apply_prefix(obj, cfg: dict[str, str], prefix: str, rename: dict | None = None):
    updates = {}
    rename = rename or {}
    for key, value in cfg.items():
        if not key.startswith(prefix + "."):
            continue
        name = rename.get(key[len(prefix) + 1 :], key[len(prefix) + 1 :])
        if not hasattr(obj, name):
            raise ConfigError(f"unknown config key {key!r}")
        updates[name] = _coerce(value, getattr(obj, name))
    return replace(obj, **updates) if updates else obj


def arch_from_config(cfg: dict[str, str], vocab_size: int, conditioning: str = "bare",
                     typology_dim: int = 0) -> ArchConfig:
    if conditioning == "bare":
        default_r = 0
    elif conditioning == "oest":
        default_r = OEST_ENCODER_DIM
    else:
        default_r = PLAT_ENCODER_DIM
    arch = ArchConfig(
        vocab_size=vocab_size, conditioning=conditioning, typology_dim=typology_dim,
        encoder_dim=int(cfg.get("model.encoder_dim", default_r)) if conditioning != "bare" else 0,
    )
    return _apply_prefix(arch, cfg, "model")


def train_config_from(cfg: dict[str, str], seed: int, prefix: str = "train") -> TrainConfig:
    tc = TrainConfig(seed=seed)
    tc = _apply_prefix(tc, cfg, prefix)
    tc = replace(
        tc,
        batch=_apply_prefix(BatchConfig(seed=seed), cfg, "batch", rename={"size": "batch_size"}),
        dropout=_apply_prefix(DropoutConfig(), cfg, "dropout"),
    )
    return tc
