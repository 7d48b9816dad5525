"""Hyperparameter records, presets, and the key=value config file.

Config files are INI-style: one ``[section]`` per record (``model``,
``training``, ``data``, ``explain``) holding flat ``key = value`` lines.
Resolution order, later wins: preset defaults, config file, environment
(``MAMBACAPSULE_<SECTION>_<KEY>``), command-line flags.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class ModelConfig:
    seq_len: int = 187
    dim: int = 32
    n_layers: int = 6
    n_state: int = 8
    n_branches: int = 2
    conv_width: int = 3
    n_classes: int = 5
    primary_dim: int = 8
    class_dim: int = 16
    routing_iters: int = 3
    pool_stride: int = 17
    dropout: float = 0.1
    recon_hidden1: int = 128
    recon_hidden2: int = 256
    window_fraction: float = 0.6
    recon_sigmoid: bool = True

    @property
    def n_primary(self) -> int:
        return (self.seq_len // self.pool_stride) * self.dim // self.primary_dim

    @property
    def recon_len(self) -> int:
        return int(round(self.window_fraction * self.seq_len))

    def validate(self) -> "ModelConfig":
        for name in ("seq_len", "dim", "n_layers", "n_state", "n_branches", "n_classes",
                     "primary_dim", "class_dim", "routing_iters", "pool_stride",
                     "recon_hidden1", "recon_hidden2"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if self.dim % self.n_branches:
            raise ConfigError(f"model.n_branches={self.n_branches} must divide model.dim={self.dim}")
        if self.conv_width % 2 == 0:
            raise ConfigError(f"model.conv_width must be odd, got {self.conv_width}")
        if self.seq_len % self.pool_stride:
            raise ConfigError(f"model.pool_stride={self.pool_stride} must divide model.seq_len={self.seq_len}")
        if (self.seq_len // self.pool_stride * self.dim) % self.primary_dim:
            raise ConfigError("pooled feature size must be a multiple of model.primary_dim")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must lie in [0, 1), got {self.dropout}")
        if not 0.0 < self.window_fraction <= 1.0:
            raise ConfigError(f"model.window_fraction must lie in (0, 1], got {self.window_fraction}")
        return self


@dataclass
class LossConfig:
    m_plus_start: float = 0.9
    m_minus: float = 0.1
    lam: float = 0.5
    recon_weight: float | None = None  # None -> 0.0005 * reconstruction length

    def validate(self) -> "LossConfig":
        if not 0.0 < self.m_minus < self.m_plus_start < 1.0:
            raise ConfigError("need 0 < m_minus < m_plus_start < 1")
        if self.lam <= 0:
            raise ConfigError("lam must be positive")
        if self.recon_weight is not None and self.recon_weight < 0:
            raise ConfigError("recon_weight must be >= 0")
        return self


@dataclass
class ScheduleConfig:
    warmup_steps: int
    total_steps: int
    lr_peak: float = 1e-3
    lr_min: float = 1e-5
    m_plus_start: float = 0.9
    m_plus_end: float = 0.95

    def validate(self) -> "ScheduleConfig":
        if not 0 < self.warmup_steps <= self.total_steps:
            raise ConfigError(f"need 0 < warmup_steps ({self.warmup_steps}) <= total_steps ({self.total_steps})")
        if not self.lr_min < self.lr_peak:
            raise ConfigError("lr_min must be below lr_peak")
        if not self.m_plus_start <= self.m_plus_end < 1.0:
            raise ConfigError("need m_plus_start <= m_plus_end < 1")
        return self


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr_peak: float = 1e-3
    lr_min: float = 1e-5
    warmup_fraction: float = 0.1
    m_plus_end: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    workers: int = 1
    loss: LossConfig = field(default_factory=LossConfig)

    def schedule(self, total_steps: int) -> ScheduleConfig:
        # a one-step run is all warmup; otherwise keep at least one cosine step
        warmup = max(1, min(int(round(self.warmup_fraction * total_steps)), total_steps - 1))
        return ScheduleConfig(warmup, total_steps, self.lr_peak, self.lr_min,
                              self.loss.m_plus_start, self.m_plus_end).validate()

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.batch_size < 1 or self.workers < 1:
            raise ConfigError("epochs, batch_size and workers must be >= 1")
        self.loss.validate()
        return self


@dataclass
class DataConfig:
    dataset: str = "synthetic"  # synthetic | mitbih | ptb
    train_csv: str = ""
    test_csv: str = ""
    split_ratio: float = 0.8
    synth_train_per_class: int = 100
    synth_test_per_class: int = 50
    noise: float = 0.03
    seed: int = 0


@dataclass
class ExplainConfig:
    shifts: str = "-5..5"
    target: str = ""
    beat_index: int = 0


PRESETS: dict[str, dict[str, dict]] = {
    "default": {},
    # desk-scale toy at the full beat length
    "tiny": {
        "model": dict(dim=8, n_layers=1, n_state=4, n_branches=2, n_classes=2, primary_dim=8,
                      class_dim=8, routing_iters=3, pool_stride=17, recon_hidden1=32, recon_hidden2=64),
        "training": dict(epochs=30, batch_size=20, lr_peak=1e-2, lr_min=1e-4),
    },
    # smallest network exercised by finite-difference checks
    "micro": {
        "model": dict(seq_len=16, dim=4, n_layers=1, n_state=2, n_branches=2, n_classes=2,
                      primary_dim=4, class_dim=4, routing_iters=2, pool_stride=4, dropout=0.0,
                      recon_hidden1=8, recon_hidden2=8),
    },
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.training.validate()
        return self


def _section_fields(cfg: RunConfig, section: str) -> dict[str, tuple[object, dataclasses.Field]]:
    target = getattr(cfg, section)
    out = {f.name: (target, f) for f in fields(target) if f.name != "loss"}
    if section == "training":
        out.update({f.name: (target.loss, f) for f in fields(LossConfig)})
    return out


def _coerce(raw: str, f: dataclasses.Field, key: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind.startswith("bool"):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if raw.strip().lower() in ("none", "") and "None" in kind:
            return None
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key}") from None


def set_value(cfg: RunConfig, section: str, key: str, raw):
    table = _section_fields(cfg, section) if section in ("model", "training", "data", "explain") else None
    if table is None:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in table:
        raise ConfigError(f"unknown config key {section}.{key}")
    target, f = table[key]
    value = _coerce(raw, f, f"{section}.{key}") if isinstance(raw, str) else raw
    setattr(target, key, value)


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = RunConfig()
    for section, values in PRESETS[name].items():
        for key, value in values.items():
            set_value(cfg, section, key, value)
    return cfg


def apply_file(cfg: RunConfig, path: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for section in parser.sections():
        for key, raw in parser.items(section):
            set_value(cfg, section, key, raw)
    return cfg


def apply_env(cfg: RunConfig, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    prefix = "MAMBACAPSULE_"
    for name, raw in environ.items():
        if not name.startswith(prefix) or name == "MAMBACAPSULE_PURE_PYTHON":
            continue
        rest = name[len(prefix):].lower()
        section, _, key = rest.partition("_")
        set_value(cfg, section, key, raw)
    return cfg


def to_text(cfg: RunConfig) -> str:
    lines = []
    for section in ("model", "training", "data", "explain"):
        lines.append(f"[{section}]")
        for key, (target, _) in _section_fields(cfg, section).items():
            value = getattr(target, key)
            lines.append(f"{key} = {'none' if value is None else value}")
        lines.append("")
    return "\n".join(lines)


def model_to_dict(m: ModelConfig) -> dict:
    return dataclasses.asdict(m)


def model_from_dict(d: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    return ModelConfig(**{k: v for k, v in d.items() if k in known}).validate()
