"""Run configuration files.

Format: one ``key = value`` per line, ``#`` starts a comment, UTF-8.
Unknown keys are rejected so typos fail before a long run starts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig, TrainConfig

SEED_ENV = "SSAN_SEED"

MODEL_KEYS = ("d_model", "ffn_dim", "n_heads", "n_layers", "selector_layer", "tau", "tau_final",
              "selector_scaled", "dropout", "embed_std")
TRAIN_KEYS = ("epochs", "lr", "batch_size", "beta1", "beta2", "eps", "clip_norm")
CORPUS_KEYS = ("task", "vocab_size", "n_train", "n_dev", "n_test", "positive_rate")
OTHER_KEYS = ("seed", "layer", "head", "data", "out")


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    corpus: dict = field(default_factory=dict)
    seed: int = 0
    layer: int | None = None
    head: int | None = None
    data: Path | None = None
    out: Path | None = None

    def model_overrides(self) -> dict:
        return dict(self.model, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.train)


def _types(cls) -> dict[str, str]:
    return {f.name: str(f.type) for f in fields(cls)}


_MODEL_TYPES = _types(ModelConfig)
_TRAIN_TYPES = _types(TrainConfig)
_CORPUS_TYPES = {"task": "str", "vocab_size": "int", "n_train": "int", "n_dev": "int", "n_test": "int",
                 "positive_rate": "float"}


def _convert(key: str, raw: str, type_name: str, lineno: int):
    optional = "None" in type_name
    if optional and raw.lower() in ("none", ""):
        return None
    try:
        if type_name.startswith("bool"):
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if type_name.startswith("int"):
            return int(raw)
        if type_name.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None
    return raw


def parse_config(text: str, env: dict | None = None) -> RunConfig:
    env = os.environ if env is None else env
    cfg = RunConfig()
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        if key in MODEL_KEYS:
            cfg.model[key] = _convert(key, raw, _MODEL_TYPES[key], lineno)
        elif key in TRAIN_KEYS:
            cfg.train[key] = _convert(key, raw, _TRAIN_TYPES[key], lineno)
        elif key in CORPUS_KEYS:
            cfg.corpus[key] = _convert(key, raw, _CORPUS_TYPES[key], lineno)
        elif key == "seed":
            cfg.seed = _convert(key, raw, "int", lineno)
        elif key in ("layer", "head"):
            setattr(cfg, key, _convert(key, raw, "int | None", lineno))
        elif key in ("data", "out"):
            setattr(cfg, key, Path(raw))
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if env.get(SEED_ENV):
        try:
            cfg.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from None
    return cfg


def load_config(path, env: dict | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no config file at {p}")
    try:
        text = p.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{p} is not UTF-8: {exc}") from None
    cfg = parse_config(text, env)
    if cfg.data is not None and not cfg.data.exists():
        raise ConfigError(f"data path {cfg.data} does not exist")
    return cfg
