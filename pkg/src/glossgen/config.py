"""Run configuration: model dimensions, trainer settings, data locations.

Config files are plain "section.key = value" lines with '#' comments; every
field of the three dataclasses is addressable, and CLI overrides use the same
keys. A sha256 digest of the resolved config ties artifacts to their settings.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

MODEL_KINDS = ("single", "parallel", "hier-du", "hier-ud")


class ConfigError(Exception):
    pass


@dataclass
class ModelConfig:
    kind: str = "single"
    d_w: int = 300            # word embedding width
    d_h: int = 150            # encoder hidden width per direction
    d_s: int = 300            # decoder hidden width
    d_attn: int = 300
    n_decoder_layers: int = 2
    d_e: int = 1024           # contextual feature width
    char_on: bool = True
    contextual_on: bool = True
    gate_on: bool = True
    s0_variant: str = "both"  # zeros | word | context | both
    max_context_len: int = 64
    temperature: float = 0.05
    max_gen_len: int = 32


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    pretrain_epochs: int = 5


@dataclass
class DataConfig:
    corpus: str = ""           # empty -> bundled mini corpus
    lm_corpus: str = ""        # empty -> bundled sentence file
    stopwords: str = ""        # empty -> bundled list
    embeddings_file: str = ""  # empty -> seeded random table
    contextual_file: str = ""  # empty -> deterministic provider
    vocab_size: int = 65000
    split_ratios: tuple = (0.8, 0.1, 0.1)


@dataclass
class Config:
    model: ModelConfig
    train: TrainConfig
    data: DataConfig


def default_config() -> Config:
    return Config(model=ModelConfig(), train=TrainConfig(), data=DataConfig())


def _coerce(raw: str, current):
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(float(x) for x in raw.split(","))
    return raw.strip()


def set_key(cfg: Config, key: str, raw: str) -> Config:
    """Apply one "section.field" assignment, returning an updated config."""
    if "." not in key:
        raise ConfigError(f"config key {key!r} must look like section.field")
    section_name, field_name = key.split(".", 1)
    section = getattr(cfg, section_name, None)
    if section is None:
        raise ConfigError(f"unknown config section {section_name!r}")
    names = {f.name for f in fields(section)}
    if field_name not in names:
        raise ConfigError(f"unknown config key {key!r}")
    value = _coerce(raw, getattr(section, field_name))
    return replace(cfg, **{section_name: replace(section, **{field_name: value})})


def load_config_file(path) -> Config:
    cfg = default_config()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, raw = (part.strip() for part in text.split("=", 1))
            try:
                cfg = set_key(cfg, key, raw)
            except (ConfigError, ValueError) as exc:
                raise ConfigError(f"{path}:{line_no}: {exc}") from None
    return cfg


def apply_overrides(cfg: Config, overrides) -> Config:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        cfg = set_key(cfg, key, raw)
    return cfg


def validate(cfg: Config) -> None:
    m = cfg.model
    for name in ("d_w", "d_h", "d_s", "d_attn", "d_e", "n_decoder_layers",
                 "max_context_len", "max_gen_len"):
        if getattr(m, name) <= 0:
            raise ConfigError(f"model.{name} must be positive")
    if m.kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {m.kind!r}")
    if m.s0_variant not in ("zeros", "word", "context", "both"):
        raise ConfigError(f"model.s0_variant {m.s0_variant!r} unknown")
    if m.temperature <= 0:
        raise ConfigError("model.temperature must be positive")
    t = cfg.train
    if t.batch_size <= 0 or t.max_epochs < 0 or t.patience < 0:
        raise ConfigError("train.batch_size/max_epochs/patience out of range")
    if not (0 <= t.beta1 < 1 and 0 <= t.beta2 < 1):
        raise ConfigError("train.beta1/beta2 must lie in [0, 1)")
    d = cfg.data
    if d.vocab_size < 4:
        raise ConfigError("data.vocab_size must be at least 4")
    if abs(sum(d.split_ratios) - 1.0) > 1e-9:
        raise ConfigError(f"data.split_ratios {d.split_ratios} must sum to 1")


def config_to_dict(cfg: Config) -> dict:
    out = asdict(cfg)
    out["data"]["split_ratios"] = list(out["data"]["split_ratios"])
    return out


def config_from_dict(payload: dict) -> Config:
    data = dict(payload["data"])
    data["split_ratios"] = tuple(data["split_ratios"])
    return Config(model=ModelConfig(**payload["model"]),
                  train=TrainConfig(**payload["train"]),
                  data=DataConfig(**data))


def config_to_text(cfg: Config) -> str:
    lines = []
    for section_name in ("model", "train", "data"):
        section = getattr(cfg, section_name)
        for f in fields(section):
            value = getattr(section, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section_name}.{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_digest(cfg: Config) -> str:
    payload = json.dumps(config_to_dict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()
