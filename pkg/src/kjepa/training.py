"""Deterministic training loops for the JEPA and autoencoder models."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .models import (
    ModelConfig,
    ae_loss,
    ema_encoder,
    init_params,
    jepa_loss,
    online_encoder,
    read_checkpoint,
    trainable_names,
    write_checkpoint,
)
from .numerics import AdamState, ModelParams, Tape, adam_step, ema_update
from .synthgen import Dataset, read_dataset

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    ema_alpha: float = 0.996
    seed: int = 0
    grad_clip: float = 0.0
    eval_every: int = 1
    eval_batch: int = 512

    def validate(self):
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ConfigError(f"ema_alpha must be in [0, 1], got {self.ema_alpha}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_ms: int

    def log_line(self) -> str:
        return f"epoch={self.epoch} train_loss={self.train_loss!r} val_loss={self.val_loss!r} ms={self.wall_ms}"


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch != self.records[-1].epoch + 1:
            raise ValueError(f"epoch {rec.epoch} out of order")
        self.records.append(rec)

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.records]

    def to_text(self) -> str:
        return "".join(r.log_line() + "\n" for r in self.records)

    @classmethod
    def from_text(cls, text: str) -> "TrainHistory":
        h = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            kv = dict(item.split("=", 1) for item in line.split())
            h.append(EpochRecord(int(kv["epoch"]), float(kv["train_loss"]), float(kv["val_loss"]), int(kv["ms"])))
        return h


@dataclass
class TrainResult:
    params: ModelParams
    config: ModelConfig
    history: TrainHistory
    checkpoint: Path | None = None
    initial_val_loss: float = float("nan")


def shuffle_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _loss(params: ModelParams, mode: str, ctx, tgt):
    return jepa_loss(params, ctx, tgt) if mode == "jepa" else ae_loss(params, ctx)


def mean_loss(params: ModelParams, data: Dataset, mode: str, batch: int = 512) -> float:
    """Mean per-element loss over a dataset, in file order, without recording."""
    if len(data) == 0:
        return float("nan")
    total = 0.0
    for start in range(0, len(data), batch):
        sl = slice(start, start + batch)
        loss = _loss(params, mode, data.context[sl], data.target[sl])
        total += float(loss.data) * (min(start + batch, len(data)) - start)
    return total / len(data)


def _check_geometry(config: ModelConfig, data: Dataset, what: str):
    if data.context_len != config.input_len:
        raise DimensionError(f"{what}: windows have length {data.context_len}, model expects {config.input_len}")


def _clip(params: ModelParams, names, max_norm: float):
    total = np.sqrt(sum(float(np.sum(np.square(params[n].grad, dtype=np.float64))) for n in names))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for n in names:
            params[n].grad *= factor


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_data: Dataset,
    val_data: Dataset,
    checkpoint: str | Path | None = None,
    log_path: str | Path | None = None,
    init: ModelParams | None = None,
) -> TrainResult:
    """Train in ``model_config.mode``; one Adam step then one EMA step per batch."""
    model_config.validate()
    train_config.validate()
    _check_geometry(model_config, train_data, "train split")
    _check_geometry(model_config, val_data, "val split")
    mode = model_config.mode
    params = init if init is not None else init_params(model_config, np.random.default_rng(train_config.seed))
    names = trainable_names(params)
    for n in names:
        params[n].requires_grad = True
    state = AdamState.for_params(ModelParams((n, params[n]) for n in names), lr=train_config.lr)
    history = TrainHistory()
    log_fh = open(log_path, "w") if log_path else None
    initial_val = mean_loss(params, val_data, mode, train_config.eval_batch)
    step = 0
    try:
        for epoch in range(train_config.epochs):
            t0 = time.perf_counter()
            order = shuffle_order(len(train_data), train_config.seed, epoch)
            total = 0.0
            for start in range(0, len(order), train_config.batch_size):
                idx = np.sort(order[start : start + train_config.batch_size])
                ctx = train_data.context[idx]
                tgt = train_data.target[idx]
                try:
                    with Tape() as tape:
                        loss = _loss(params, mode, ctx, tgt)
                    tape.backward(loss, wrt=[params[n] for n in names])
                except NumericError as exc:
                    raise NumericError(f"step {step}: {exc}") from exc
                if train_config.grad_clip > 0:
                    _clip(params, names, train_config.grad_clip)
                adam_step(state, params)
                if mode == "jepa":
                    ema_update(ema_encoder(params), online_encoder(params), train_config.ema_alpha)
                total += float(loss.data) * len(idx)
                step += 1
            train_loss = total / max(len(train_data), 1)
            if (epoch + 1) % train_config.eval_every == 0 or epoch + 1 == train_config.epochs:
                val_loss = mean_loss(params, val_data, mode, train_config.eval_batch)
            else:
                val_loss = float("nan")
            rec = EpochRecord(epoch, train_loss, val_loss, int(round((time.perf_counter() - t0) * 1000)))
            history.append(rec)
            log.info(rec.log_line())
            if log_fh:
                log_fh.write(rec.log_line() + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    ckpt = None
    if checkpoint is not None:
        ckpt = Path(checkpoint)
        write_checkpoint(ckpt, params, model_config)
    return TrainResult(params, model_config, history, ckpt, initial_val)


def train_jepa(model_config: ModelConfig, train_config: TrainConfig, train_path, val_path, checkpoint=None, log_path=None):
    if model_config.mode != "jepa":
        model_config = ModelConfig(**{**model_config.__dict__, "mode": "jepa"})
    return train(model_config, train_config, read_dataset(train_path), read_dataset(val_path), checkpoint, log_path)


def train_ae(model_config: ModelConfig, train_config: TrainConfig, train_path, val_path, checkpoint=None, log_path=None):
    if model_config.mode != "ae":
        model_config = ModelConfig(**{**model_config.__dict__, "mode": "ae"})
    return train(model_config, train_config, read_dataset(train_path), read_dataset(val_path), checkpoint, log_path)


def evaluate(checkpoint, split_path, batch: int = 512) -> float:
    """Mean loss of a saved model on a KJD1 split; parameters are not modified."""
    params, config = read_checkpoint(checkpoint)
    data = read_dataset(split_path)
    _check_geometry(config, data, str(split_path))
    return mean_loss(params, data, config.mode, batch)
