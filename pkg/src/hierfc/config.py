"""Run configuration: YAML keys with documented defaults.

Defaults are the daily-retail hyperparameter column (28-step history,
7-step horizon, K=8 basis functions, rank-12 representative set). Paths
and splits have no sensible defaults and stay None until provided.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import yaml

from .data import SplitSpec, parse_splits
from .model import MODES, ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # data
    values: str | None = None        # wide values CSV (leaf-only or full panel)
    hierarchy: str | None = None     # child_id,parent_id edge CSV
    covariates: str | None = None    # optional covariate CSV; default calendar
    missing: str = "error"           # NaN policy: error | ffill
    splits: str | None = None        # train_end:val_start-val_end:test_start-test_end
    rolling: int = 5                 # rolling evaluation windows per segment
    history: int = 28                # H
    horizon: int = 7                 # F
    # model
    k_basis: int = 8                 # K
    nmf_rank: int = 12               # R, representative series count
    enc_hidden: int = 42
    dec_hidden: int = 24
    lambda_e: float = 3.4e-6
    mode: str = "full"               # full | no_reg | tvar_only | bd_only
    shared_encoder: bool = False
    metric_scale: str = "rescaled"   # rescaled | raw
    # training
    lr: float = 0.004
    decay_rate: float = 0.5
    decay_interval: int = 6
    epochs: int = 40
    batch_size: int = 512
    patience: int = 10
    seed: int = 0
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.missing not in ("error", "ffill"):
            raise ConfigError(f"missing must be 'error' or 'ffill', got {self.missing!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {sorted(MODES)}, got {self.mode!r}")
        if self.metric_scale not in ("rescaled", "raw"):
            raise ConfigError(
                f"metric_scale must be 'rescaled' or 'raw', got {self.metric_scale!r}"
            )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {"rolling", "history", "horizon", "k_basis", "nmf_rank", "enc_hidden",
               "dec_hidden", "decay_interval", "epochs", "batch_size", "patience",
               "seed"}
_FLOAT_FIELDS = {"lambda_e", "lr", "decay_rate", "clip_norm"}
_BOOL_FIELDS = {"shared_encoder"}
_STR_FIELDS = {"values", "hierarchy", "covariates", "missing", "splits", "mode",
               "metric_scale"}


def _coerce(key: str, value):
    if value is None and key in ("values", "hierarchy", "covariates", "splits"):
        return None
    if key in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be a boolean, got {value!r}")
        return value
    if key in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        return value
    if key in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
        return float(value)
    if key in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
        return value
    raise ConfigError(f"unknown config key: {key!r}")


def config_from_mapping(mapping: dict) -> RunConfig:
    if not isinstance(mapping, dict):
        raise ConfigError(f"config must be a mapping, got {type(mapping).__name__}")
    for key in mapping:
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key: {key!r}")
    kwargs = {key: _coerce(key, value) for key, value in mapping.items()}
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if raw is None:
        raw = {}
    return config_from_mapping(raw)


def apply_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Replace fields with CLI-provided values, skipping Nones."""
    updates = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key: {key!r}")
        updates[key] = value
    return dataclasses.replace(config, **updates) if updates else config


def require_data_fields(config: RunConfig, need_splits: bool = True) -> None:
    missing = [k for k in ("values", "hierarchy") if getattr(config, k) is None]
    if need_splits and config.splits is None:
        missing.append("splits")
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")


def split_spec(config: RunConfig) -> SplitSpec:
    if config.splits is None:
        raise ConfigError("missing required config keys: splits")
    return parse_splits(config.splits, config.rolling)


def model_config(config: RunConfig, D: int, n_series: int) -> ModelConfig:
    return ModelConfig(
        H=config.history, F=config.horizon, K=config.k_basis, R=config.nmf_rank,
        D=D, n_series=n_series, enc_hidden=config.enc_hidden,
        dec_hidden=config.dec_hidden, lambda_e=config.lambda_e, mode=config.mode,
        shared_encoder=config.shared_encoder,
    )


def train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        initial_lr=config.lr, decay_rate=config.decay_rate,
        decay_interval_epochs=config.decay_interval, epochs=config.epochs,
        batch_size=config.batch_size, patience=config.patience,
        seed=config.seed, clip_norm=config.clip_norm,
    )
