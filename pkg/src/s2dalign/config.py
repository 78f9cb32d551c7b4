"""Run configuration: schema, presets, strict validation, canonical echo.

Configs are nested YAML mappings with four sections (corpus, model, train)
plus run-level keys. Unknown keys are rejected by name so typos fail loudly
before any work starts. Two presets exist: "desk" (the defaults baked into
the dataclasses, small enough for CPU runs) and "paper" (the recorded
full-scale hyperparameters; not trainable at desk scale but kept so the
profile is explicit and selectable).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .corpusio import CorpusConfig
from .errors import ConfigError
from .model import ModelConfig

PLAN_NAMES = ("canonical", "s1", "joint", "reversed", "s1s2", "s1s3")


@dataclass
class StageProfileConfig:
    epochs: int
    lr: float

    def validate(self, name: str) -> None:
        if self.epochs < 1:
            raise ConfigError(f"{name}.epochs must be >= 1, got {self.epochs}")
        if not (0 < self.lr < 1):
            raise ConfigError(f"{name}.lr must be in (0, 1), got {self.lr}")


@dataclass
class TrainConfig:
    batch_size: int = 16
    warmup_steps: int = 100
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.98
    stage1: StageProfileConfig = field(default_factory=lambda: StageProfileConfig(8, 3e-4))
    stage2: StageProfileConfig = field(default_factory=lambda: StageProfileConfig(5, 1e-4))
    stage3: StageProfileConfig = field(default_factory=lambda: StageProfileConfig(3, 5e-5))
    joint: StageProfileConfig = field(default_factory=lambda: StageProfileConfig(16, 1e-4))
    patience: int = 2
    min_delta: float = 1e-3
    l_phrases: int = 4
    lora_start_stage: int = 2  # 2 (default), 3, or 0 for never
    train_bank: bool = True
    max_gen_len: int = 96
    decode_mode: str = "greedy"

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if not (0 <= self.weight_decay < 1):
            raise ConfigError(f"weight_decay must be in [0, 1), got {self.weight_decay}")
        for b in (self.beta1, self.beta2):
            if not (0 <= b < 1):
                raise ConfigError(f"betas must be in [0, 1), got {b}")
        for name in ("stage1", "stage2", "stage3", "joint"):
            getattr(self, name).validate(name)
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.min_delta < 0:
            raise ConfigError("min_delta must be >= 0")
        if self.l_phrases < 1:
            raise ConfigError("l_phrases must be >= 1")
        if self.lora_start_stage not in (0, 2, 3):
            raise ConfigError(
                f"lora_start_stage must be 0 (never), 2, or 3; got {self.lora_start_stage}"
            )
        if self.max_gen_len < 1:
            raise ConfigError("max_gen_len must be >= 1")
        if self.decode_mode not in ("greedy", "beam"):
            raise ConfigError(f"decode_mode must be greedy or beam, got {self.decode_mode!r}")


@dataclass
class RunConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    plan: str = "canonical"
    profile: str = "desk"

    def validate(self) -> None:
        self.corpus.validate()
        self.model.validate()
        self.train.validate()
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.plan not in PLAN_NAMES:
            raise ConfigError(f"plan must be one of {PLAN_NAMES}, got {self.plan!r}")
        if self.profile not in ("desk", "paper"):
            raise ConfigError(f"profile must be desk or paper, got {self.profile!r}")


def apply_paper_profile(cfg: RunConfig) -> None:
    """Pin the recorded full-scale hyperparameters over the desk defaults."""
    cfg.model.n_mem = 64
    cfg.model.d_v = 768
    cfg.model.d_t = 768
    cfg.model.lora_r = 16
    cfg.model.lora_alpha = 16.0
    cfg.train.batch_size = 64
    cfg.train.warmup_steps = 1000
    cfg.train.weight_decay = 0.05
    cfg.train.stage1 = StageProfileConfig(8, 3e-4)
    cfg.train.stage2 = StageProfileConfig(5, 1e-4)
    cfg.train.stage3 = StageProfileConfig(3, 5e-5)


def _set_fields(obj, mapping: dict, where: str) -> None:
    known = {f.name: f for f in fields(obj)}
    for key, value in mapping.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where}.{key}")
        current = getattr(obj, key)
        if isinstance(current, StageProfileConfig):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{key} must be a mapping with epochs/lr")
            unknown = set(value) - {"epochs", "lr"}
            if unknown:
                raise ConfigError(f"unknown config key {where}.{key}.{unknown.pop()}")
            setattr(obj, key, StageProfileConfig(
                epochs=int(value.get("epochs", current.epochs)),
                lr=float(value.get("lr", current.lr)),
            ))
        elif key == "image_size":
            if not (isinstance(value, (list, tuple)) and len(value) == 2):
                raise ConfigError(f"{where}.image_size must be a [H, W] pair")
            setattr(obj, key, (int(value[0]), int(value[1])))
        else:
            expected = type(current)
            if expected is bool:
                if not isinstance(value, bool):
                    raise ConfigError(f"{where}.{key} must be a boolean")
                setattr(obj, key, value)
            elif expected is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{where}.{key} must be an integer")
                setattr(obj, key, value)
            elif expected is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{where}.{key} must be a number")
                setattr(obj, key, float(value))
            elif expected is str:
                if not isinstance(value, str):
                    raise ConfigError(f"{where}.{key} must be a string")
                setattr(obj, key, value)
            else:
                setattr(obj, key, value)


def load_config(path: Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig from an optional YAML file plus overrides."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping, got {type(loaded).__name__}")
        raw = loaded
    if overrides:
        raw = _deep_merge(raw, overrides)

    cfg = RunConfig()
    profile = raw.get("profile", "desk")
    if profile == "paper":
        apply_paper_profile(cfg)
        cfg.profile = "paper"
    elif profile != "desk":
        raise ConfigError(f"profile must be desk or paper, got {profile!r}")

    allowed_top = {"profile", "corpus", "model", "train", "seed", "plan"}
    unknown = set(raw) - allowed_top
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]}")
    for section, target in (("corpus", cfg.corpus), ("model", cfg.model),
                            ("train", cfg.train)):
        if section in raw:
            if not isinstance(raw[section], dict):
                raise ConfigError(f"config section {section} must be a mapping")
            _set_fields(target, raw[section], section)
    if "seed" in raw:
        if isinstance(raw["seed"], bool) or not isinstance(raw["seed"], int):
            raise ConfigError("seed must be an integer")
        cfg.seed = raw["seed"]
    if "plan" in raw:
        cfg.plan = raw["plan"]
    cfg.validate()
    return cfg


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _as_plain(obj):
    if isinstance(obj, (CorpusConfig, ModelConfig, TrainConfig, StageProfileConfig, RunConfig)):
        return {f.name: _as_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def config_echo(cfg: RunConfig) -> str:
    """Canonical JSON text of the resolved config (byte-stable)."""
    return json.dumps(_as_plain(cfg), indent=2, sort_keys=True) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(config_echo(cfg).encode("utf-8")).hexdigest()[:16]
