"""Pipeline configuration: one YAML file for every stage, with dotted command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .acoustic.model import ArchitectureConfig, ConfigurationError
from .acoustic.optim import LrSchedule
from .ctc import DecoderConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AudioConfig:
    target_rate: int = 16000
    highpass_cutoff: float = 150.0
    min_duration: float = 2.0
    max_duration: float = 30.0
    silence_threshold: float = -40.0  # dBFS
    min_silence: float = 0.3


@dataclass(frozen=True)
class FeatureConfig:
    frame_length: float = 0.02
    frame_shift: float = 0.01
    cache_dir: str | None = None


@dataclass(frozen=True)
class TrainingConfig:
    initial_lr: float = 1e-3
    decay_factor: float = 10.0
    decay_every: int = 2
    # Adam beta1. A momentum of 0.99 with lr 1e-4 is the documented large-scale
    # alternative; the defaults here are the Adam settings.
    momentum: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 20
    seed: int = 0
    patience: int = 3
    target_loss: float | None = None  # stop once the monitored loss drops below this

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.initial_lr, self.decay_factor, self.decay_every)


@dataclass(frozen=True)
class LmConfig:
    order: int = 4
    path: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    audio: AudioConfig = field(default_factory=AudioConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    alphabet: str | None = None  # None selects the bundled inventory
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def resolve(self, path: str | None) -> Path | None:
        """Interpret a config-relative path."""
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else (self.base_dir / p)

    def to_dict(self) -> dict:
        return {
            "audio": dataclasses.asdict(self.audio),
            "features": dataclasses.asdict(self.features),
            "alphabet": self.alphabet,
            "architecture": self.architecture.to_dict(),
            "training": dataclasses.asdict(self.training),
            "decoder": dataclasses.asdict(self.decoder),
            "lm": dataclasses.asdict(self.lm),
        }


_SECTIONS = {
    "audio": AudioConfig,
    "features": FeatureConfig,
    "training": TrainingConfig,
    "decoder": DecoderConfig,
    "lm": LmConfig,
}


def _typed(value, annotation: str, where: str):
    """Coerce YAML scalars to the annotated field type (YAML reads '1e-3' as a string)."""
    base = annotation.replace(" | None", "").strip()
    if value is None or base not in ("float", "int"):
        return value
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected {base}, got {value!r}")
    try:
        num = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected {base}, got {value!r}") from None
    if base == "int":
        if num != int(num):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(num)
    return num


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    types = {f.name: str(f.type) for f in dataclasses.fields(cls)}
    data = {k: _typed(v, types[k], f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _validate(cfg: PipelineConfig) -> None:
    checks = [
        (cfg.audio.target_rate > 0, "audio.target_rate must be positive"),
        (0 < cfg.audio.highpass_cutoff < cfg.audio.target_rate / 2, "audio.highpass_cutoff must lie in (0, Nyquist)"),
        (0 < cfg.audio.min_duration < cfg.audio.max_duration, "audio durations must satisfy 0 < min < max"),
        (cfg.audio.min_silence > 0, "audio.min_silence must be positive"),
        (0 < cfg.features.frame_shift <= cfg.features.frame_length, "features: need 0 < frame_shift <= frame_length"),
        (cfg.training.initial_lr > 0, "training.initial_lr must be positive"),
        (cfg.training.decay_factor >= 1, "training.decay_factor must be >= 1"),
        (cfg.training.decay_every >= 1, "training.decay_every must be >= 1"),
        (0 <= cfg.training.momentum < 1, "training.momentum must lie in [0, 1)"),
        (0 <= cfg.training.beta2 < 1, "training.beta2 must lie in [0, 1)"),
        (cfg.training.batch_size >= 1, "training.batch_size must be >= 1"),
        (cfg.training.max_epochs >= 1, "training.max_epochs must be >= 1"),
        (cfg.training.patience >= 1, "training.patience must be >= 1"),
        (cfg.decoder.alpha >= 0, "decoder.alpha must be >= 0"),
        (cfg.lm.order >= 1, "lm.order must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def from_dict(data: dict | None, base_dir=".") -> PipelineConfig:
    data = dict(data or {})
    known = set(_SECTIONS) | {"alphabet", "architecture"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config section(s) {', '.join(unknown)}")
    kw = {name: _build(cls, data.get(name), name) for name, cls in _SECTIONS.items()}
    arch = data.get("architecture")
    try:
        kw["architecture"] = ArchitectureConfig(**(arch or {}))
    except (TypeError, ConfigurationError) as exc:
        raise ConfigError(f"architecture: {exc}") from None
    alphabet = data.get("alphabet")
    if alphabet is not None and not isinstance(alphabet, str):
        raise ConfigError("alphabet must be a path or null")
    cfg = PipelineConfig(alphabet=alphabet, base_dir=Path(base_dir), **kw)
    _validate(cfg)
    if alphabet is not None and not cfg.resolve(alphabet).is_file():
        raise ConfigError(f"alphabet file {cfg.resolve(alphabet)} not found")
    return cfg


def _parse_scalar(text: str):
    return yaml.safe_load(text) if text != "" else ""


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.field=value`` assignments (values parsed as YAML scalars)."""
    data = dict(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            nxt = node.get(p)
            nxt = dict(nxt) if isinstance(nxt, dict) else {}
            node[p] = nxt
            node = nxt
        node[parts[-1]] = _parse_scalar(value)
    return data


def load_config(path=None, overrides=()) -> PipelineConfig:
    """Load a YAML config (or defaults when ``path`` is None) and apply overrides."""
    if path is None:
        data, base = {}, Path(".")
    else:
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.parent
    return from_dict(apply_overrides(data, overrides), base)


def dump_config(cfg: PipelineConfig) -> str:
    """Canonical YAML: sorted keys, block style; load(dump(c)) == c."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False, allow_unicode=True)
