"""Experiment configuration: nested sections mirroring the module layout.

Configs load from YAML (all fields optional, defaults below), can be
overridden with dotted ``section.key=value`` pairs, and reject unknown keys.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(Exception):
    """Malformed config file, unknown key, or invalid value."""


@dataclass
class DataConfig:
    train_path: str | None = None
    test_path: str | None = None
    format: str = "csv"
    has_header: bool = False
    window: int = 100
    train_stride: int | None = None  # None -> window
    eval_stride: int | None = None   # None -> window
    normalize: bool = True
    train_fraction: float = 1.0


@dataclass
class SyntheticConfig:
    length: int = 5000
    train_length: int = 5000
    channels: int = 2
    noise: float = 0.05
    amplitude: float = 1.0
    components: int = 2
    period_min: int = 25
    period_max: int = 80
    length_min: int = 20
    length_max: int = 50
    seed: int = 0
    anomalies: dict[str, int] = field(
        default_factory=lambda: {"global": 2, "contextual": 2, "shapelet": 2, "seasonal": 2, "trend": 2}
    )


@dataclass
class SdeConfig:
    kind: str = "vp"
    beta_min: float = 0.1
    beta_max: float = 20.0
    sigma_min: float = 0.01
    sigma_max: float = 50.0
    t_eps: float = 1e-5


@dataclass
class ScorenetConfig:
    layers: int = 3
    d_model: int = 512
    n_heads: int = 8
    d_ff: int | None = None
    dropout: float = 0.0


@dataclass
class SolverSection:
    t_rec: float = 0.5
    t_end: float = 1e-3
    rtol: float = 1e-5
    atol: float = 1e-5
    max_steps: int = 10000
    batch_windows: int = 64


@dataclass
class LossConfig:
    lambda1: float | None = None  # None -> 1/N
    lambda2: float | None = None  # None -> 1/N
    lambda3: float = 3.0
    enable_dsm: bool = True
    enable_rec: bool = True
    enable_vm: bool = True
    enable_gamma: bool = True
    gamma_mode: str = "minimax"  # minimax | literal


@dataclass
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-4
    epochs: int = 10
    scheduler_gamma: float = 0.25
    patience: int = 3
    seed: int = 0
    minimax_combined: bool = False
    eval_checkpoint: str = "best"  # best | last


@dataclass
class ThresholdConfig:
    ratio_source: str = "gap_statistic"  # gap_statistic | fixed
    fixed_ratio: float = 1.0
    pool: str = "train_test"  # train_test | test


@dataclass
class MetricsConfig:
    vus_fixed_buffer: int | None = None


@dataclass
class AblationConfig:
    raw_model: bool = False


@dataclass
class RunsConfig:
    n_seeds: int = 1


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    sde: SdeConfig = field(default_factory=SdeConfig)
    scorenet: ScorenetConfig = field(default_factory=ScorenetConfig)
    solver: SolverSection = field(default_factory=SolverSection)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    runs: RunsConfig = field(default_factory=RunsConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.data.window < 2:
            raise ConfigError("data.window must be >= 2")
        if not 0.0 < self.data.train_fraction <= 1.0:
            raise ConfigError("data.train_fraction must lie in (0, 1]")
        if self.sde.kind not in ("vp", "subvp", "ve"):
            raise ConfigError(f"sde.kind must be vp, subvp, or ve, got {self.sde.kind!r}")
        if self.loss.gamma_mode not in ("minimax", "literal"):
            raise ConfigError(f"loss.gamma_mode must be minimax or literal, got {self.loss.gamma_mode!r}")
        if self.threshold.ratio_source not in ("gap_statistic", "fixed"):
            raise ConfigError(
                f"threshold.ratio_source must be gap_statistic or fixed, got {self.threshold.ratio_source!r}"
            )
        if not 0.0 < self.threshold.fixed_ratio < 100.0:
            raise ConfigError("threshold.fixed_ratio must lie in (0, 100)")
        if self.threshold.pool not in ("train_test", "test"):
            raise ConfigError(f"threshold.pool must be train_test or test, got {self.threshold.pool!r}")
        if self.runs.n_seeds < 1:
            raise ConfigError("runs.n_seeds must be >= 1")
        if self.train.eval_checkpoint not in ("best", "last"):
            raise ConfigError(f"train.eval_checkpoint must be best or last, got {self.train.eval_checkpoint!r}")
        if self.train.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")


def _coerce(value: Any, target_type: Any, key: str) -> Any:
    """Best-effort coercion of parsed YAML / override strings to field types."""
    if value is None:
        return None
    if target_type is bool or target_type == (bool | None):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if target_type is int or target_type == (int | None):
            out = int(value)
            if isinstance(value, float) and out != value:
                raise ValueError
            return out
        if target_type is float or target_type == (float | None):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {target_type}") from None
    return value


def _apply_section(section: Any, values: dict[str, Any], prefix: str) -> None:
    fields = {f.name: f for f in dataclasses.fields(section)}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(f"unknown key {prefix}.{key}")
        f = fields[key]
        if f.name == "anomalies":
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix}.{key}: expected a mapping of anomaly kind to count")
            setattr(section, key, {str(k): int(v) for k, v in value.items()})
            continue
        hint = f.type
        if hint in ("int", "int | None"):
            value = _coerce(value, int if hint == "int" else (int | None), f"{prefix}.{key}")
        elif hint in ("float", "float | None"):
            value = _coerce(value, float if hint == "float" else (float | None), f"{prefix}.{key}")
        elif hint == "bool":
            value = _coerce(value, bool, f"{prefix}.{key}")
        elif hint in ("str", "str | None") and value is not None:
            value = str(value)
        setattr(section, key, value)


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping of sections")
    sections = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    for name, values in raw.items():
        if name not in sections:
            raise ConfigError(f"unknown section {name!r}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        _apply_section(sections[name], values, name)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Load a YAML config (or pure defaults) and apply dotted overrides."""
    raw: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, value = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {dotted!r} must look like section.key")
        node = raw.setdefault(parts[0], {})
        if not isinstance(node, dict):
            raise ConfigError(f"section {parts[0]!r} must be a mapping")
        node[parts[1]] = yaml.safe_load(value)
    return config_from_dict(raw)


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
