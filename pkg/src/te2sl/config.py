"""INI experiment configuration.

Sections: [experiment], [model], [corpus], [strategy], [optim.source],
[optim.adapt], [optim.te2sl], [eval]. Every key must be known; overrides use
``section.key=value`` (e.g. ``optim.source.lr=0.003``).
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .adaptation import KINDS, MaskSpec, OptimSettings, Strategy
from .corpus import CorpusConfig
from .model import ModelConfig
from .numerics import ConfigError


@dataclass
class StrategyConfig:
    kind: str = "te2sl"
    compare: tuple[str, ...] = KINDS
    mask_frac: float = 0.05
    mask_spans: int = 2
    mask_width: int = 0  # 0 -> ceil(0.1 * L')
    d_min: int = 1
    d_max: int = 3
    soft_prompt_len: int = 8
    soft_prompt_lr: float = 3e-3
    soft_prompt_epochs: int = 5
    te2sl_hidden: int = 32
    te2sl_blocks: int = 2
    te2sl_heads: int = 4
    te2sl_kernel: int = 5

    def strategy(self, kind: str | None = None) -> Strategy:
        mask = MaskSpec(self.mask_frac, self.mask_spans, self.mask_width or None)
        return Strategy(kind or self.kind, mask, self.d_min, self.d_max, self.soft_prompt_len)

    def validate(self) -> None:
        for k in (self.kind, *self.compare):
            self.strategy(k)
        if self.soft_prompt_lr <= 0 or self.soft_prompt_epochs < 1:
            raise ConfigError("soft prompt optimizer needs lr > 0 and epochs >= 1")


@dataclass
class EvalConfig:
    max_len: int = 14
    batch_size: int = 100
    splits: tuple[str, ...] = ("target_test",)

    def validate(self) -> None:
        if self.max_len < 1 or self.batch_size < 1:
            raise ConfigError("eval.max_len and eval.batch_size must be >= 1")


@dataclass
class ExperimentSection:
    seed: int = 1


@dataclass
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    optim_source: OptimSettings = field(default_factory=lambda: OptimSettings(lr=3e-3, epochs=15))
    optim_adapt: OptimSettings = field(default_factory=lambda: OptimSettings(lr=1e-3, epochs=10))
    optim_te2sl: OptimSettings = field(default_factory=lambda: OptimSettings(lr=1e-3, epochs=10))
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def seed(self) -> int:
        return self.experiment.seed

    def validate(self) -> None:
        for sec in (self.optim_source, self.optim_adapt, self.optim_te2sl):
            sec.__post_init__()
        self.model.__post_init__()
        self.strategy.validate()
        self.eval.validate()
        n_words = self.corpus.n_source + self.corpus.n_oov
        if self.model.n_words != n_words:
            raise ConfigError(f"model.n_words={self.model.n_words} but the corpus defines {n_words} words")
        if self.model.feat_dim != self.corpus.feat_dim:
            raise ConfigError("model.feat_dim must equal corpus.feat_dim")

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {sec: dataclasses.asdict(getattr(self, attr)) for sec, attr in SECTIONS.items()}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


SECTIONS = {
    "experiment": "experiment",
    "model": "model",
    "corpus": "corpus",
    "strategy": "strategy",
    "optim.source": "optim_source",
    "optim.adapt": "optim_adapt",
    "optim.te2sl": "optim_te2sl",
    "eval": "eval",
}


def _coerce(value: str, current: Any, key: str):
    value = value.strip()
    try:
        if isinstance(current, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            return tuple(v for v in value.replace(",", " ").split() if v)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(current).__name__}") from None
    return value


def _set(cfg: ExperimentConfig, section: str, key: str, value: str) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    obj = getattr(cfg, SECTIONS[section])
    names = {f.name for f in dataclasses.fields(obj)}
    if key not in names:
        raise ConfigError(f"unknown config key {section}.{key}")
    setattr(obj, key, _coerce(value, getattr(obj, key), f"{section}.{key}"))


def apply_overrides(cfg: ExperimentConfig, overrides) -> None:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        path, value = item.split("=", 1)
        if "." not in path:
            raise ConfigError(f"override {item!r} needs a section.key path")
        section, key = path.rsplit(".", 1)
        _set(cfg, section.strip(), key.strip(), value)


def load_config(path: str | Path | None = None, overrides=None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in parser.sections():
            for key, value in parser.items(section):
                _set(cfg, section, key, value)
    apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for sec, values in cfg.to_dict().items():
        lines.append(f"[{sec}]")
        for k, v in values.items():
            if isinstance(v, (list, tuple)):
                v = " ".join(map(str, v))
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
