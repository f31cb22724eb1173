"""AdamW training of the toy LM on a tokenized corpus.

Batch composition at step ``s`` depends only on ``(seed, s)``, so a run that
is stopped and resumed from a saved training state finishes with exactly the
parameters of an uninterrupted run.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt
from .errors import DivergenceDetected, ValidationError
from .model import ModelSnapshot, loss_and_grad, loss_only

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2500
    batch_size: int = 64
    lr: float = 3e-3
    min_lr_ratio: float = 0.1
    warmup: int = 100
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    val_fraction: float = 0.05
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ValidationError("learning rate must be finite and >= 0")
        if self.steps < 1 or self.batch_size < 1:
            raise ValidationError("steps and batch_size must be >= 1")

    def lr_at(self, step: int) -> float:
        """Linear warmup, then cosine decay to ``min_lr_ratio * lr``."""
        if step < self.warmup:
            return self.lr * (step + 1) / self.warmup
        frac = (step - self.warmup) / max(1, self.steps - self.warmup)
        return self.lr * (self.min_lr_ratio + (1 - self.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac)))


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    losses: list[float] = field(default_factory=list)


@dataclass
class TrainResult:
    model: ModelSnapshot
    losses: list[float]
    val_loss: float


def pad_batch(seqs: Sequence[np.ndarray]):
    """Inputs, next-token targets and loss mask for a list of id sequences."""
    T = max(len(s) for s in seqs) - 1
    ids = np.zeros((len(seqs), T), dtype=np.int64)
    tgt = np.zeros_like(ids)
    mask = np.zeros((len(seqs), T))
    for i, s in enumerate(seqs):
        n = len(s) - 1
        ids[i, :n], tgt[i, :n], mask[i, :n] = s[:-1], s[1:], 1.0
    return ids, tgt, mask


def split_corpus(encoded: Sequence[np.ndarray], val_fraction: float):
    n_val = int(len(encoded) * val_fraction)
    if len(encoded) - n_val < 1:
        raise ValidationError("corpus too small to train on")
    return list(encoded[: len(encoded) - n_val]), list(encoded[len(encoded) - n_val:])


def evaluate(model: ModelSnapshot, seqs: Sequence[np.ndarray], batch_size: int = 256) -> float:
    total, count = 0.0, 0.0
    for i in range(0, len(seqs), batch_size):
        ids, tgt, mask = pad_batch(seqs[i:i + batch_size])
        total += loss_only(model.params, model.config, ids, tgt, mask) * mask.sum()
        count += mask.sum()
    return total / count if count else float("nan")


def _decayed(name: str, arr: np.ndarray) -> bool:
    return arr.ndim == 2


def save_state(state: TrainState, model: ModelSnapshot, path) -> None:
    blocks = {}
    for prefix, tensors in (("param/", state.params), ("m/", state.m), ("v/", state.v)):
        for k, a in tensors.items():
            blocks[prefix + k] = a
    meta = {"step": state.step, "losses": state.losses, "vocab": list(model.vocab)}
    ckpt.atomic_write(path, ckpt.encode(ckpt.KIND_TRAIN_STATE, model.config, blocks, meta))


def load_state(path, model: ModelSnapshot) -> TrainState:
    _, config, meta, blocks = ckpt.decode(ckpt.read_bytes(path), ckpt.KIND_TRAIN_STATE)
    if config != model.config:
        raise ckpt.CorruptCheckpoint(f"training state was written for {config}, not {model.config}")
    names = list(model.params)
    try:
        parts = [{k: blocks[prefix + k].copy() for k in names} for prefix in ("param/", "m/", "v/")]
    except KeyError as exc:
        raise ckpt.CorruptCheckpoint(f"training state lacks block {exc.args[0]}") from None
    return TrainState(*parts, step=int(meta["step"]), losses=list(meta["losses"]))


def train(model: ModelSnapshot, encoded: Sequence[np.ndarray], hp: TrainConfig,
          state_path: str | Path | None = None, resume: bool = False,
          on_checkpoint: Callable[[TrainState], None] | None = None,
          stop_after: int | None = None) -> TrainResult:
    """Minimize next-token cross-entropy with AdamW.

    Every ``hp.checkpoint_every`` steps the full optimizer state is written to
    ``state_path`` (if given). ``stop_after`` ends the run early at that step,
    which is how interruption is simulated in tests.
    """
    train_seqs, val_seqs = split_corpus(encoded, hp.val_fraction)
    if resume and state_path is not None and Path(state_path).exists():
        state = load_state(state_path, model)
        log.info("resuming from step %d", state.step)
    else:
        params = {k: v.copy() for k, v in model.params.items()}
        state = TrainState(params, {k: np.zeros_like(v) for k, v in params.items()},
                           {k: np.zeros_like(v) for k, v in params.items()})
    cfg = model.config
    p, m, v = state.params, state.m, state.v
    while state.step < hp.steps:
        if stop_after is not None and state.step >= stop_after:
            break
        step = state.step
        rng = np.random.default_rng([hp.seed, step])
        batch = [train_seqs[i] for i in rng.integers(0, len(train_seqs), hp.batch_size)]
        loss, grads = loss_and_grad(p, cfg, *pad_batch(batch))
        if not math.isfinite(loss):
            raise DivergenceDetected(f"loss became {loss} at step {step}")
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        clip = min(1.0, hp.grad_clip / (norm + 1e-12)) if hp.grad_clip > 0 else 1.0
        lr = hp.lr_at(step)
        t = step + 1
        bc1, bc2 = 1 - hp.beta1 ** t, 1 - hp.beta2 ** t
        for k in p:
            g = grads[k] * clip
            m[k] = hp.beta1 * m[k] + (1 - hp.beta1) * g
            v[k] = hp.beta2 * v[k] + (1 - hp.beta2) * g * g
            if _decayed(k, p[k]):
                p[k] = p[k] - lr * hp.weight_decay * p[k]
            p[k] = p[k] - lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + hp.eps)
        state.losses.append(loss)
        state.step = t
        if t % 100 == 0:
            log.info("step %d loss %.4f", t, loss)
        if hp.checkpoint_every and t % hp.checkpoint_every == 0:
            if state_path is not None:
                save_state(state, model, state_path)
            if on_checkpoint is not None:
                on_checkpoint(state)
    if state.step < hp.steps and state_path is not None:
        save_state(state, model, state_path)
    for k, a in p.items():
        if not np.all(np.isfinite(a)):
            raise DivergenceDetected(f"parameter {k} became non-finite")
    trained = ModelSnapshot(cfg, {k: a.copy() for k, a in p.items()}, model.vocab)
    val = evaluate(trained, val_seqs) if val_seqs else float("nan")
    return TrainResult(trained, list(state.losses), val)
