"""Adam, the epoch loop over mean BCE, and checkpointing."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import mfft
from .classifier import bce_loss
from .data import FeatureSet
from .model import MFFNet, ModelConfig
from .tensor import Tensor, backward

logger = logging.getLogger(__name__)

PRECISIONS = {"float64": np.float64, "float32": np.float32}


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, epoch: int, batch: int, sample_ids: list[str], value: float):
        self.epoch, self.batch, self.sample_ids, self.value = epoch, batch, sample_ids, value
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}; "
                         f"samples {sample_ids}")


class CheckpointMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    precision: str = "float64"
    grad_clip: float | None = None
    strict_similarity: bool = False

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


class Adam:
    """Adam with bias correction; moments are keyed by parameter name."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray | None]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: Adam) -> Adam:
    state.step(params, grads)
    return state


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values() if g is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for name, g in grads.items():
            if g is not None:
                grads[name] = g * scale


def _batch_tensors(data: FeatureSet, idx: np.ndarray):
    return (Tensor(data.R_T[idx]), Tensor(data.R_I[idx]), Tensor(data.C_T[idx]),
            Tensor(data.C_I[idx]))


def build_model(model_config: ModelConfig, train_config: TrainConfig) -> MFFNet:
    model = MFFNet(model_config, np.random.default_rng([train_config.seed, 0x1A17]))
    return model.astype(train_config.dtype)


@dataclass
class TrainResult:
    model: MFFNet
    optimizer: Adam
    log: list[dict] = field(default_factory=list)
    epochs_done: int = 0


def train(data: FeatureSet, model_config: ModelConfig, config: TrainConfig,
          resume: TrainResult | None = None, log_path: str | os.PathLike | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Mini-batch Adam on mean BCE.

    Batches are drawn from a per-epoch generator seeded by ``(seed, epoch)``, so
    a run resumed from a checkpoint reproduces the uninterrupted trajectory.
    """
    config.validate()
    if len(data) == 0:
        raise TrainingError("training split is empty")
    data = data.astype(config.dtype)
    if resume is None:
        model = build_model(model_config, config)
        opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
        result = TrainResult(model, opt)
    else:
        result = resume
        result.optimizer.lr = config.learning_rate
    model, opt = result.model, result.optimizer
    params = dict(model.named_parameters())
    n = len(data)

    for epoch in range(result.epochs_done, config.epochs):
        start = time.perf_counter()
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        loss_sum = 0.0
        correct = 0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            model.zero_grad()
            y_pred, _ = model(*_batch_tensors(data, idx), strict=config.strict_similarity)
            loss = bce_loss(data.labels[idx], y_pred)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLossError(epoch, b, [data.ids[i] for i in idx], value)
            backward(loss)
            grads = {name: p.grad for name, p in params.items()}
            if config.grad_clip:
                _clip_grads(grads, config.grad_clip)
            opt.step(params, grads)
            loss_sum += value * len(idx)
            correct += int(np.sum((y_pred.data >= 0.5) == (data.labels[idx] == 1)))
        record = {"epoch": epoch + 1, "mean_loss": loss_sum / n, "train_acc": correct / n,
                  "wall_ms": round((time.perf_counter() - start) * 1000.0, 3)}
        result.log.append(record)
        result.epochs_done = epoch + 1
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if on_epoch is not None:
            on_epoch(record)
        logger.info("epoch %d loss %.6f acc %.4f", epoch + 1, record["mean_loss"], record["train_acc"])
    return result


# -- checkpoints -----------------------------------------------------------

def config_hash(model_config: ModelConfig, precision: str) -> str:
    text = json.dumps({"model": model_config.to_dict(), "precision": precision},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def encode_checkpoint(result: TrainResult, model_config: ModelConfig, config: TrainConfig) -> bytes:
    entries: dict[str, np.ndarray] = {}
    for name, p in result.model.named_parameters():
        entries[f"param/{name}"] = p.data
    for name in sorted(result.optimizer.m):
        entries[f"adam_m/{name}"] = result.optimizer.m[name]
        entries[f"adam_v/{name}"] = result.optimizer.v[name]
    header = {
        "config_hash": config_hash(model_config, config.precision),
        "model_config": model_config.to_dict(),
        "train_config": asdict(config),
        "adam_t": result.optimizer.t,
        "epochs_done": result.epochs_done,
        # wall-clock times would make otherwise identical runs differ byte-wise
        "log": [{k: v for k, v in rec.items() if k != "wall_ms"} for rec in result.log],
    }
    return mfft.encode_container(header, entries)


def checkpoint_save(path: str | os.PathLike, result: TrainResult, model_config: ModelConfig,
                    config: TrainConfig) -> None:
    Path(path).write_bytes(encode_checkpoint(result, model_config, config))


def checkpoint_load(path: str | os.PathLike, model_config: ModelConfig | None = None,
                    config: TrainConfig | None = None) -> tuple[TrainResult, ModelConfig, TrainConfig]:
    """Restore a run. When configs are given their hash must match the stored one."""
    header, entries = mfft.decode_container(Path(path).read_bytes())
    stored_model = ModelConfig.from_dict(header["model_config"])
    stored_train = TrainConfig(**header["train_config"])
    if model_config is not None:
        precision = (config or stored_train).precision
        expected = config_hash(model_config, precision)
        if expected != header["config_hash"]:
            raise CheckpointMismatchError(
                f"checkpoint {path} was written for a different model configuration "
                f"(hash {header['config_hash'][:12]} vs {expected[:12]}); "
                f"stored ablation: {stored_model.ablation.active() or 'none'}, "
                f"requested: {model_config.ablation.active() or 'none'}")
    model_config = model_config or stored_model
    config = config or stored_train
    model = MFFNet(model_config, 0).astype(config.dtype)
    model.load_state_dict({k[len("param/"):]: v for k, v in entries.items() if k.startswith("param/")})
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    opt.t = int(header["adam_t"])
    for key, value in entries.items():
        if key.startswith("adam_m/"):
            opt.m[key[len("adam_m/"):]] = value.astype(config.dtype)
        elif key.startswith("adam_v/"):
            opt.v[key[len("adam_v/"):]] = value.astype(config.dtype)
    result = TrainResult(model, opt, list(header.get("log", [])), int(header["epochs_done"]))
    return result, model_config, config


def with_epochs(config: TrainConfig, epochs: int) -> TrainConfig:
    return replace(config, epochs=epochs)
