"""Declarative experiment configuration, read from YAML with ``section.key=value`` overrides."""

from __future__ import annotations

import copy
import os
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from ..attack import AttackConfig

CACHE_ENV = "ADVTRANSFER_MODEL_CACHE"


class ConfigError(ValueError):
    """Malformed configuration file or override."""


@dataclass
class DataSection:
    n_samples: int = 20          # utterances attacked by `attack`/`matrix`
    data_seed: int = 100
    train_size: int = 400        # synthetic utterances used to train the toy recognizers
    train_seed: int = 1
    image_train_size: int = 2000
    image_test_size: int = 500
    image_seed: int = 1
    image_contrast: float = 0.02


@dataclass
class ModelSection:
    ctc_seeds: list = field(default_factory=lambda: [11, 12, 13])
    ctc_dropout: float = 0.25
    ctc_epochs: int = 12
    classifier_seeds: list = field(default_factory=lambda: [21, 22])
    classifier_epochs: int = 10
    checkpoints: dict = field(default_factory=dict)  # extra models: name -> checkpoint archive path


@dataclass
class RunSection:
    proxies: list = field(default_factory=lambda: ["toy_ctc_s11"])
    validation: str | None = "toy_ctc_s12"
    evaluate: list = field(default_factory=list)  # empty = every recognizer in the pool
    corpus: str | None = None                     # target sentence file; None = built-in list


@dataclass
class PrecisionSection:
    ks: list = field(default_factory=lambda: list(range(1, 11)))
    repeats: int = 3
    n_inputs: int = 16
    steps_per_k: int = 1000
    learning_rate: float = 0.1
    l2_radius: float = 0.5
    lr_schedule: str = "cosine"


@dataclass
class PrefixSection:
    word: str = "BUT"
    snr_bound: float = 12.0
    iterations: int = 300
    learning_rate: float = 0.05
    n_samples: int = 10
    data_seed: int = 7


@dataclass
class ExperimentConfig:
    seed: int = 0
    model_cache: str | None = None
    attack: AttackConfig = field(default_factory=AttackConfig)
    data: DataSection = field(default_factory=DataSection)
    models: ModelSection = field(default_factory=ModelSection)
    run: RunSection = field(default_factory=RunSection)
    precision: PrecisionSection = field(default_factory=PrecisionSection)
    prefix: PrefixSection = field(default_factory=PrefixSection)

    def resolved_attack(self) -> AttackConfig:
        a = copy.copy(self.attack)
        a.seed = self.seed
        return a

    def cache_dir(self) -> Path:
        if self.model_cache:
            return Path(self.model_cache)
        env = os.environ.get(CACHE_ENV)
        return Path(env) if env else Path.home() / ".cache" / "advtransfer" / "models"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attack"] = self.attack.to_dict()
        d["attack"].pop("seed")
        return d

    def dump(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")
        return path


def _section_types() -> dict[str, type]:
    return {f.name: f.default_factory for f in fields(ExperimentConfig) if f.default_factory is not MISSING}


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
    elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    elif isinstance(default, int) and not isinstance(default, bool):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
    elif isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    elif isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(f"{key}: expected a mapping, got {value!r}")
    return value


def _build_section(name: str, cls, data: Any):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    if cls is AttackConfig:
        if "seed" in data:
            raise ConfigError("attack.seed is not configurable; set the top-level seed (or --seed)")
        default = AttackConfig()
    else:
        default = cls()
    known = {f.name for f in fields(default)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(f'{name}.{k}' for k in unknown)}")
    values = {k: _coerce(f"{name}.{k}", v, getattr(default, k)) for k, v in data.items()}
    try:
        return cls(**{**{f.name: getattr(default, f.name) for f in fields(default)}, **values})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def from_dict(data: dict) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    sections = _section_types()
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in sections:
            kwargs[key] = _build_section(key, sections[key], value)
        elif key == "seed":
            kwargs[key] = _coerce("seed", value, 0)
        else:
            kwargs[key] = None if value is None else str(value)
    return ExperimentConfig(**kwargs)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """``section.key=value`` (or ``key=value`` for top-level keys); values parse as YAML scalars/lists."""
    data = copy.deepcopy(data or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw) if raw.strip() else None
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from exc
        parts = key.strip().split(".")
        if len(parts) > 2:
            raise ConfigError(f"override key {key!r} nests too deeply")
        if len(parts) == 2:
            section = data.setdefault(parts[0], {})
            if not isinstance(section, dict):
                raise ConfigError(f"{parts[0]} is not a section")
            section[parts[1]] = value
        else:
            data[parts[0]] = value
    return data


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return from_dict(apply_overrides(data, list(overrides or [])))


def describe_keys() -> list[tuple[str, Any]]:
    """Every configurable key with its default, in declaration order."""
    out: list[tuple[str, Any]] = [("seed", 0), ("model_cache", f"${CACHE_ENV} or ~/.cache/advtransfer/models")]
    sections = _section_types()
    for name, cls in sections.items():
        obj = cls()
        for f in fields(obj):
            if cls is AttackConfig and f.name == "seed":
                continue
            v = getattr(obj, f.name)
            out.append((f"{name}.{f.name}", getattr(v, "value", v) if not is_dataclass(v) else asdict(v)))
    return out
