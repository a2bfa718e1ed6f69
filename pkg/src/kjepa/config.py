"""Experiment configuration: a sectioned ``key = value`` text file.

Grammar (parsed with :mod:`configparser`, interpolation off)::

    # comment
    [data]
    seqs_per_regime = 500
    global_seed = 0
    ...

Sections are ``data``, ``model``, ``train`` and ``analyze``. Every key is
optional and falls back to its default; unknown sections or keys are errors
naming the offending key. :meth:`ExperimentConfig.to_text` writes the fully
resolved form, which parses back to an equal config.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .models import ModelConfig
from .synthgen import CONTEXT_LEN, DELTA, MASTER_LEN, DatasetConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataSection:
    seqs_per_regime: int = 500
    global_seed: int = 0
    context_len: int = CONTEXT_LEN
    delta: int = DELTA
    master_len: int = MASTER_LEN
    out_dir: str = "data"


@dataclass(frozen=True)
class ModelSection:
    latent_dim: int = 32
    predictor: str = "linear"
    predictor_init: str = "identity"
    head: str = "two_layer"


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 30
    batch: int = 256
    lr: float = 1e-3
    ema_alpha: float = 0.996
    seed: int = 0


@dataclass(frozen=True)
class AnalyzeSection:
    kmeans_restarts: int = 10
    kmeans_seed: int = 0


SECTIONS = {"data": DataSection, "model": ModelSection, "train": TrainSection, "analyze": AnalyzeSection}


def _coerce(section: str, key: str, raw: str, kind):
    try:
        if kind is int:
            return int(raw, 0)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    analyze: AnalyzeSection = field(default_factory=AnalyzeSection)

    def validate(self) -> "ExperimentConfig":
        d = self.data
        if d.delta + d.context_len > d.master_len:
            raise ConfigError(
                f"[data] delta + context_len = {d.delta + d.context_len} exceeds master_len = {d.master_len}"
            )
        self.dataset_config().validate()
        self.model_config().validate()
        self.train_config().validate()
        if self.analyze.kmeans_restarts < 1:
            raise ConfigError("[analyze] kmeans_restarts must be >= 1")
        return self

    # -- conversions ---------------------------------------------------------------

    def dataset_config(self, out_dir: str | None = None) -> DatasetConfig:
        d = self.data
        return DatasetConfig(
            seqs_per_regime=d.seqs_per_regime,
            global_seed=d.global_seed,
            out_dir=out_dir if out_dir is not None else d.out_dir,
            context_len=d.context_len,
            delta=d.delta,
            master_len=d.master_len,
        )

    def model_config(self, mode: str = "jepa") -> ModelConfig:
        m = self.model
        return ModelConfig(
            latent_dim=m.latent_dim,
            head=m.head,
            predictor=m.predictor,
            predictor_init=m.predictor_init,
            mode=mode,
            input_len=self.data.context_len,
        )

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(epochs=t.epochs, batch_size=t.batch, lr=t.lr, ema_alpha=t.ema_alpha, seed=t.seed)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """``--seed`` override: drives both data generation and training."""
        return replace(self, data=replace(self.data, global_seed=seed), train=replace(self.train, seed=seed))

    def with_out_dir(self, out_dir: str) -> "ExperimentConfig":
        return replace(self, data=replace(self.data, out_dir=str(out_dir)))

    # -- text form -----------------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            sec = getattr(self, name)
            for f in fields(sec):
                value = getattr(sec, f.name)
                lines.append(f"{f.name} = {value!r}" if isinstance(value, float) else f"{f.name} = {value}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, strict=True, default_section="\0none")
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        sections = {}
        for name in parser.sections():
            if name not in SECTIONS:
                raise ConfigError(f"{source}: unknown section [{name}]")
            kind = SECTIONS[name]
            types = {f.name: type(f.default) for f in fields(kind)}
            values = {}
            for key, raw in parser.items(name):
                if key not in types:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
                values[key] = _coerce(name, key, raw.strip(), types[key])
            sections[name] = kind(**values)
        return cls(**sections).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, str(path))
