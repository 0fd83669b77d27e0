"""Mini-batch Adam training loop and model checkpoint files.

Training is deterministic given its seed: initialization, batch shuffling,
and dropout masks all derive from it.  The returned parameters are the best
epoch by validation loss (final epoch when no validation split is given) and
are always stored in 64-bit regardless of the compute dtype.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Normalization
from .filters import FilterSpec
from .model import ModelConfig, ModelParameters, forward, init_parameters, loss_and_gradients


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float | None = None
    dtype: str = "float64"  # compute dtype; stored parameters stay float64

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float | None


@dataclass
class TrainResult:
    params: ModelParameters
    history: list
    best_epoch: int


class Adam:
    """Plain Adam with bias correction and optional global-norm gradient clipping."""

    def __init__(self, names, tensors, config: TrainConfig):
        self.config = config
        self.t = 0
        self.m = {n: np.zeros_like(tensors[n]) for n in names}
        self.v = {n: np.zeros_like(tensors[n]) for n in names}

    def step(self, tensors, grads) -> None:
        cfg = self.config
        if cfg.grad_clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > cfg.grad_clip_norm:
                scale = cfg.grad_clip_norm / total
                grads = {n: g * scale for n, g in grads.items()}
        self.t += 1
        correction1 = 1.0 - cfg.beta1**self.t
        correction2 = 1.0 - cfg.beta2**self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            update = (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
            tensors[name] -= cfg.learning_rate * update


def evaluate_loss(params: ModelParameters, X, y, batch_size: int = 512) -> float:
    """Mean cross-entropy without gradients, chunked to bound memory."""
    total = 0.0
    n = len(y)
    for lo in range(0, n, batch_size):
        probs = forward(params, X[lo : lo + batch_size])
        logp = np.log(np.clip(probs[np.arange(len(probs)), y[lo : lo + batch_size]], 1e-300, None))
        total -= float(logp.sum())
    return total / n


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray | None = None,
    val_y: np.ndarray | None = None,
    progress=None,
) -> TrainResult:
    """Train from a seeded initialization; returns best-by-validation parameters."""
    if len(train_y) == 0:
        raise ValueError("training fold is empty")
    dtype = np.dtype(train_config.dtype)
    params = init_parameters(model_config, train_config.seed).astype(dtype)
    X = np.asarray(train_x, dtype=dtype)
    y = np.asarray(train_y)
    has_val = val_x is not None and val_y is not None and len(val_y) > 0
    if has_val:
        val_x = np.asarray(val_x, dtype=dtype)
        val_y = np.asarray(val_y)

    shuffle_rng = np.random.default_rng(np.random.SeedSequence(train_config.seed).spawn(1)[0])
    dropout_rng = np.random.default_rng(np.random.SeedSequence(train_config.seed).spawn(2)[1])
    optimizer = Adam(params.trainable_names(), params.tensors, train_config)

    history: list[EpochStats] = []
    best_epoch = -1
    best_val = np.inf
    best_tensors = None
    for epoch in range(train_config.epochs):
        order = shuffle_rng.permutation(len(y))
        epoch_loss = 0.0
        for lo in range(0, len(y), train_config.batch_size):
            batch = order[lo : lo + train_config.batch_size]
            loss, grads = loss_and_gradients(params, X[batch], y[batch], rng=dropout_rng)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: loss {loss} at epoch {epoch}, step {lo // train_config.batch_size}"
                )
            optimizer.step(params.tensors, grads)
            epoch_loss += loss * len(batch)
        epoch_loss /= len(y)

        val_loss = evaluate_loss(params, val_x, val_y) if has_val else None
        history.append(EpochStats(epoch=epoch, train_loss=epoch_loss, val_loss=val_loss))
        if progress is not None:
            msg = f"epoch {epoch}: train_loss={epoch_loss:.4f}"
            if val_loss is not None:
                msg += f" val_loss={val_loss:.4f}"
            progress(msg)
        current = val_loss if val_loss is not None else epoch_loss
        if current < best_val:
            best_val = current
            best_epoch = epoch
            best_tensors = {k: v.copy() for k, v in params.tensors.items()}

    final = ModelParameters(model_config, best_tensors).astype(np.float64)
    return TrainResult(params=final, history=history, best_epoch=best_epoch)


def write_loss_curve(path, history) -> None:
    with open(Path(path), "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in history:
            val = "" if row.val_loss is None else repr(row.val_loss)
            fh.write(f"{row.epoch},{repr(row.train_loss)},{val}\n")


# Checkpoints ---------------------------------------------------------------

def save_checkpoint(
    path,
    params: ModelParameters,
    normalization: Normalization | None = None,
    filter_spec: FilterSpec | None = None,
) -> None:
    """Self-describing checkpoint: config JSON plus every tensor in 64-bit."""
    meta = {
        "format": "needlesense-checkpoint-v1",
        "config": params.config.to_dict(),
        "normalization": None if normalization is None else normalization.to_dict(),
        "filter": None
        if filter_spec is None
        else {
            "order": filter_spec.order,
            "cutoff_hz": filter_spec.cutoff_hz,
            "sample_rate_hz": filter_spec.sample_rate_hz,
        },
        "tensor_names": list(params.tensors),
    }
    arrays = {f"tensor/{k}": np.asarray(v, dtype=np.float64) for k, v in params.tensors.items()}
    np.savez(Path(path), __meta__=np.bytes_(json.dumps(meta).encode()), **arrays)


def load_checkpoint(path):
    """Load (params, normalization, filter_spec) back from a checkpoint file."""
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format") != "needlesense-checkpoint-v1":
            raise ValueError(f"{path}: unrecognized checkpoint format")
        tensors = {name: data[f"tensor/{name}"] for name in meta["tensor_names"]}
    params = ModelParameters(ModelConfig.from_dict(meta["config"]), tensors)
    norm = meta.get("normalization")
    filt = meta.get("filter")
    return (
        params,
        None if norm is None else Normalization.from_dict(norm),
        None if filt is None else FilterSpec(**filt),
    )
