"""
Run configuration: one dataclass per YAML section, CLI overrides and the
effective-config echo written next to every run's outputs.
"""

import logging
import os
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

import yaml

from errors import ConfigError, DatasetIOError
from metadata_encoder import MetaConfig
from model import ModelConfig
from mutual_fusion import FusionConfig
from optimizer import ScheduleSettings
from visual_encoder import ViTConfig
from weight_head import LOSSES, HeadConfig

logger = logging.getLogger(__name__)

EFFECTIVE_CONFIG = "effective_config.yaml"


@dataclass
class DataConfig:
    n: int = 2000
    seed: int = 7
    categories: str = "data/categories.yaml"
    split: tuple = (0.70, 0.15, 0.15)
    split_seed: int = 7
    augment: bool = True
    photometric: bool = False


@dataclass
class TrainConfig:
    epochs: int = 40
    warmup_epochs: int = 10
    batch_size: int = 32
    lr_head: float = 1e-3
    lr_backbone: float = 1e-4
    lr_min: float = 0.0
    restart_period: int = 40
    restart_mult: float = 1.0
    weight_decay: float = 1e-4
    ema_decay: float = 0.999
    ema_warmup: bool = True
    clip_norm: float = 1.0
    loss: str = "msle"
    seed: int = 0

    def schedule(self) -> ScheduleSettings:
        return ScheduleSettings(self.lr_head, self.lr_backbone, self.lr_min,
                                self.restart_period, self.restart_mult, self.warmup_epochs)


def _default_bins() -> list:
    return [
        {"label": "Light", "lo": 0.0, "hi": 100.0},
        {"label": "Medium", "lo": 100.0, "hi": 500.0},
        {"label": "Heavy", "lo": 1000.0, "hi": 3500.0},
    ]


@dataclass
class EvalConfig:
    split: str = "test"
    bins: list = field(default_factory=_default_bins)
    ablation_workers: int = 1
    ablation_axes: tuple = ("fusion", "loss", "depth", "granularity")


@dataclass
class ExplainConfig:
    narrator: str = "none"
    endpoint_url: str = ""
    model: str = ""
    timeout_ms: int = 10000
    ollama_url: str = "http://localhost:11434"
    template: str = "static/explanation_template.txt"
    eps: float = 1e-8


@dataclass
class RuntimeConfig:
    threads: int = 1
    progress: bool = True
    out_dir: str = "runs"


SECTIONS = {
    "data": DataConfig,
    "vit": ViTConfig,
    "fusion": FusionConfig,
    "head": HeadConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "explain": ExplainConfig,
    "runtime": RuntimeConfig,
}


def _coerce(section: str, key: str, value, default):
    dotted = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{dotted} must be true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{dotted} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{dotted} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{dotted} must be a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{dotted} must be a list, got {value!r}")
        return tuple(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{dotted} must be a list, got {value!r}")
        return value
    return value


def _build_section(name: str, values: dict):
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError(f"Section '{name}' must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"Unknown config key '{name}.{unknown[0]}'")
    kwargs = {}
    for key, value in values.items():
        f = known[key]
        default = f.default if f.default is not MISSING else f.default_factory()
        kwargs[key] = _coerce(name, key, value, default)
    return cls(**kwargs)


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    vit: ViTConfig = field(default_factory=ViTConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError("The run config must be a mapping of sections")
        unknown = sorted(set(raw) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"Unknown config section '{unknown[0]}'")
        return cls(**{name: _build_section(name, raw[name] or {}) for name in raw})

    @classmethod
    def load(cls, path: str | Path | None = None) -> "RunConfig":
        """
        Load a YAML run config; no path gives the built-in defaults.
        """
        if path is None:
            return cls()
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = yaml.safe_load(f)
        except FileNotFoundError:
            raise DatasetIOError(f"Config file not found: {path}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}") from e
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            section = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    def set(self, dotted: str, value) -> None:
        try:
            section, key = dotted.split(".", 1)
        except ValueError:
            raise ConfigError(f"Override key '{dotted}' must look like section.key") from None
        if section not in SECTIONS:
            raise ConfigError(f"Unknown config section '{section}'")
        merged = asdict(getattr(self, section))
        if key not in merged:
            raise ConfigError(f"Unknown config key '{dotted}'")
        merged[key] = value
        setattr(self, section, _build_section(section, merged))

    def apply_overrides(self, overrides: list[str]) -> "RunConfig":
        """Apply `section.key=value` strings; values are parsed as YAML scalars."""
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"Override '{item}' must look like section.key=value")
            key, text = item.split("=", 1)
            try:
                value = yaml.safe_load(text)
            except yaml.YAMLError as e:
                raise ConfigError(f"Cannot parse override value for '{key}': {e}") from e
            self.set(key.strip(), value)
        return self

    def apply_env(self, environ: dict | None = None) -> "RunConfig":
        env = os.environ if environ is None else environ
        if env.get("XAI_ENDPOINT_URL"):
            self.explain.endpoint_url = env["XAI_ENDPOINT_URL"]
            if self.explain.narrator == "none":
                self.explain.narrator = "http"
        if env.get("XAI_MODEL"):
            self.explain.model = env["XAI_MODEL"]
        if env.get("XAI_TIMEOUT_MS"):
            try:
                self.explain.timeout_ms = int(env["XAI_TIMEOUT_MS"])
            except ValueError:
                raise ConfigError(f"XAI_TIMEOUT_MS must be an integer, got {env['XAI_TIMEOUT_MS']!r}") from None
        return self

    def validate(self) -> "RunConfig":
        self.vit.validate()
        self.fusion.validate()
        self.head.validate()
        t = self.train
        if t.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {t.epochs}")
        if not 0 <= t.warmup_epochs < t.epochs:
            raise ConfigError(f"train.warmup_epochs={t.warmup_epochs} must be below train.epochs={t.epochs}")
        if min(t.lr_head, t.lr_backbone) <= 0 or t.batch_size < 1 or t.restart_period < 1:
            raise ConfigError("Learning rates, batch size and restart period must be positive")
        if t.lr_min < 0 or t.weight_decay < 0 or not 0.0 <= t.ema_decay <= 1.0:
            raise ConfigError("lr_min and weight_decay must be >= 0 and ema_decay in [0, 1]")
        if t.loss not in LOSSES:
            raise ConfigError(f"Unknown loss '{t.loss}' (expected one of {', '.join(LOSSES)})")
        split = self.data.split
        if len(split) != 3 or min(split) < 0 or abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError(f"data.split must be three non-negative fractions summing to 1, got {list(split)}")
        if self.eval.split not in ("train", "val", "test"):
            raise ConfigError(f"eval.split must be train, val or test, got '{self.eval.split}'")
        if self.explain.narrator not in ("none", "http", "ollama"):
            raise ConfigError(f"explain.narrator must be none, http or ollama, got '{self.explain.narrator}'")
        if self.runtime.threads < 1:
            raise ConfigError("runtime.threads must be >= 1")
        return self

    def model_config(self, num_categories: int) -> ModelConfig:
        return ModelConfig(vit=ViTConfig(**asdict(self.vit)), meta=MetaConfig(num_categories=num_categories),
                           fusion=FusionConfig(**asdict(self.fusion)), head=HeadConfig(**asdict(self.head)))

    def save(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / EFFECTIVE_CONFIG
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                yaml.safe_dump(self.to_dict(), f, sort_keys=False)
        except OSError as e:
            raise DatasetIOError(f"Cannot write {path}: {e}") from e
        return path
