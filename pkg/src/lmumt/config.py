"""Run configuration: flat ``section.key=value`` files with typed defaults."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

OUTPUT_ENV = "LMUMT_OUTPUT_DIR"


@dataclass
class PathsConfig:
    mono_x: str | None = None
    mono_y: str | None = None
    dev_x: str | None = None
    dev_y: str | None = None
    output_dir: str | None = None
    tokenized: bool = True


@dataclass
class LMConfig:
    order: int = 3
    discount: float = 0.75


@dataclass
class EmbedConfig:
    dim: int = 64
    window: int = 5
    lam: float = 30.0
    rounds: int = 5
    min_anchors: int = 25
    seed_top: int = 500
    bootstrap: bool = True
    anchors: int = 10


@dataclass
class PhraseConfig:
    max_len: int = 2
    top_k: int = 20
    min_count: int = 5


@dataclass
class SMTConfig:
    beam: int = 8
    distortion_limit: int = 3
    distortion_weight: float = -0.5
    unk_penalty: float = -1.0
    lm_weight: float = 1.0
    tm_weight: float = 1.0
    max_candidates: int = 5


@dataclass
class NMTConfig:
    d_m: int = 64
    lr: float = 0.05
    batch: int = 32
    clip: float = 5.0
    passes: int = 2
    bt_passes: int = 0
    lr_decay: float = 1.0


@dataclass
class TrainConfig:
    sub_dataset_size: int = 2000
    max_epochs: int = 10
    patience: int = 3
    beam_train: int = 4
    beam_eval: int = 16
    mode: str = "weighted"
    dev_size: int = 500


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    phrase: PhraseConfig = field(default_factory=PhraseConfig)
    smt: SMTConfig = field(default_factory=SMTConfig)
    nmt: NMTConfig = field(default_factory=NMTConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def validate(self) -> "RunConfig":
        checks = [
            ("lm.order", 1 <= self.lm.order <= 5),
            ("lm.discount", 0 < self.lm.discount < 1),
            ("embed.dim", self.embed.dim >= 1),
            ("embed.window", self.embed.window >= 1),
            ("embed.lam", self.embed.lam >= 0),
            ("embed.rounds", self.embed.rounds >= 1),
            ("embed.anchors", self.embed.anchors >= 1),
            ("phrase.max_len", self.phrase.max_len >= 1),
            ("phrase.top_k", self.phrase.top_k >= 1),
            ("smt.beam", self.smt.beam >= 1),
            ("smt.distortion_limit", self.smt.distortion_limit >= 0),
            ("smt.distortion_weight", self.smt.distortion_weight <= 0),
            ("smt.unk_penalty", self.smt.unk_penalty <= 0),
            ("smt.lm_weight", self.smt.lm_weight > 0),
            ("smt.tm_weight", self.smt.tm_weight > 0),
            ("nmt.d_m", self.nmt.d_m >= 2),
            ("nmt.lr", self.nmt.lr > 0),
            ("nmt.batch", self.nmt.batch >= 1),
            ("nmt.clip", self.nmt.clip > 0),
            ("nmt.passes", self.nmt.passes >= 1),
            ("nmt.bt_passes", self.nmt.bt_passes >= 0),
            ("nmt.lr_decay", 0 < self.nmt.lr_decay <= 1),
            ("train.sub_dataset_size", self.train.sub_dataset_size >= 1),
            ("train.max_epochs", self.train.max_epochs >= 0),
            ("train.patience", self.train.patience >= 1),
            ("train.beam_train", self.train.beam_train >= 1),
            ("train.beam_eval", self.train.beam_eval >= 1),
            ("train.mode", self.train.mode in ("weighted", "uniform")),
            ("train.dev_size", self.train.dev_size >= 1),
        ]
        for key, ok in checks:
            if not ok:
                raise ValueError(f"invalid config value for {key}: {self.get(key)!r}")
        return self

    def get(self, key: str) -> Any:
        obj = self
        for part in key.split("."):
            obj = getattr(obj, part)
        return obj

    def set(self, key: str, raw: Any) -> None:
        """Assign ``key`` from a raw (possibly string) value, coercing to the field type."""
        parts = key.split(".")
        obj = self
        for part in parts[:-1]:
            if not hasattr(obj, part) or not dataclasses.is_dataclass(getattr(obj, part)):
                raise KeyError(f"unknown config section in {key!r}")
            obj = getattr(obj, part)
        types = {f.name: f.type for f in fields(obj)}
        name = parts[-1]
        if name not in types or dataclasses.is_dataclass(getattr(obj, name)):
            raise KeyError(f"unknown config key {key!r}")
        setattr(obj, name, _coerce(key, types[name], raw))

    def items(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if dataclasses.is_dataclass(val):
                for g in fields(val):
                    yield f"{f.name}.{g.name}", getattr(val, g.name)
            else:
                yield f.name, val

    def dumps(self) -> str:
        return "".join(f"{k}={'' if v is None else v}\n" for k, v in self.items())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.set(key, value)
        for key, value in (overrides or {}).items():
            cfg.set(key, value)
        if os.environ.get(OUTPUT_ENV):
            cfg.paths.output_dir = os.environ[OUTPUT_ENV]
        return cfg.validate()

    @classmethod
    def load(cls, path, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"), overrides)


def _coerce(key: str, typ, raw):
    if not isinstance(raw, str):
        return raw
    typ = str(typ)
    try:
        if raw == "" and "None" in typ:
            return None
        if typ.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} as {typ}") from None
    return raw
