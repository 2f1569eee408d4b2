"""AdamW with warmup + cosine learning rate, global-norm clipping, and the
epoch loop with early stopping and F1@50 checkpoint selection."""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, NumericalError, UsageError
from .loss import composite_loss, inverse_frequency_weights
from .metrics import evaluate
from .postprocess import PostprocessConfig, postprocess

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    eta0: float = 5e-4
    warmup_epochs: int = 5
    max_epochs: int = 50
    batch_size: int = 8
    clip_norm: float = 5.0
    weight_decay: float = 1e-4
    patience: int = 5
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("eta0", "max_epochs", "batch_size", "clip_norm", "patience"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0 or self.warmup_epochs < 0:
            raise ConfigError("weight_decay and warmup_epochs must be nonnegative")
        if self.warmup_epochs > self.max_epochs:
            raise ConfigError("warmup_epochs cannot exceed max_epochs")


def lr_at(epoch, cfg):
    """Linear warmup to eta0 over the first E_w epochs, then half-cosine decay."""
    if epoch < cfg.warmup_epochs:
        return cfg.eta0 * (epoch + 1) / cfg.warmup_epochs
    span = cfg.max_epochs - cfg.warmup_epochs
    if span <= 0:
        return cfg.eta0
    return cfg.eta0 * 0.5 * (1.0 + math.cos(math.pi * (epoch - cfg.warmup_epochs) / span))


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(params, grads, state, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
    """In-place AdamW update of the arrays in ``params``."""
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in parameter block {i} (shape {g.shape})")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_global_norm(grads, max_norm):
    if not max_norm > 0:
        raise ConfigError(f"clip norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads]
    return list(grads)


@dataclass
class FitResult:
    best_state: list
    best_epoch: int
    final_state: list
    history: list = field(default_factory=list)
    stopped_early: bool = False


def _epoch_record(epoch, lr, train_loss, val_loss, report):
    rec = {"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_loss": val_loss}
    rec.update(report.as_records())
    return rec


def format_record(rec):
    parts = []
    for k, v in rec.items():
        parts.append(f"{k}={v}" if isinstance(v, int) else f"{k}={v:.6g}")
    return " ".join(parts)


def validate(model, videos, loss_cfg, M, post_cfg=None):
    """Mean composite loss (eval mode) and metrics on post-processed predictions."""
    losses, preds = [], []
    for v in videos:
        probs = model.forward(v.features)
        losses.append(composite_loss(probs, v.labels, loss_cfg, M).item())
        raw = probs[-1].data.argmax(axis=1)
        preds.append(postprocess(raw, post_cfg) if post_cfg is not None else list(raw))
    report = evaluate(preds, [list(v.labels) for v in videos])
    return float(np.mean(losses)), report


def fit(model, train, val, loss_cfg, M, cfg, post_cfg=None, run_dir=None):
    """Train ``model`` in place and return the F1@50-selected state.

    A batch is ``cfg.batch_size`` whole videos whose gradients are averaged
    before one optimizer step. Training stops after ``cfg.patience`` epochs
    without a validation-loss improvement or at ``cfg.max_epochs``.
    """
    if not train or not val:
        raise UsageError("fit needs non-empty training and validation sets")
    if post_cfg is None:
        post_cfg = PostprocessConfig()
    if loss_cfg.class_weights is None:
        loss_cfg.class_weights = inverse_frequency_weights(
            [v.labels for v in train], model.config.num_classes
        )
    params = model.tensors()
    opt = OptimizerState.zeros_like([p.data for p in params])
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    metrics_fh = open(os.path.join(run_dir, "metrics.log"), "w") if run_dir else None

    history = []
    best_f1, best_epoch, best_state, best_sel_loss = -1.0, -1, None, math.inf
    best_val_loss, stale = math.inf, 0
    stopped_early = False
    try:
        for epoch in range(cfg.max_epochs):
            t0 = time.perf_counter()
            lr = lr_at(epoch, cfg)
            order = shuffle_rng.permutation(len(train))
            epoch_losses = []
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                batch = [train[i] for i in order[start : start + cfg.batch_size]]
                model.zero_grad()
                try:
                    for v in batch:
                        probs = model.forward(v.features, training=True, rng=dropout_rng)
                        loss = composite_loss(probs, v.labels, loss_cfg, M)
                        epoch_losses.append(loss.item())
                        nc.backward(nc.mul(loss, 1.0 / len(batch)))
                    grads = clip_global_norm([p.grad for p in params], cfg.clip_norm)
                    adamw_step(
                        [p.data for p in params], grads, opt, lr, cfg.weight_decay, cfg.betas, cfg.eps
                    )
                except NumericalError as exc:
                    raise NumericalError(f"training diverged at epoch {epoch}, batch {b}: {exc}") from exc
            val_loss, report = validate(model, val, loss_cfg, M, post_cfg)
            if not math.isfinite(val_loss):
                raise NumericalError(f"validation loss is {val_loss} at epoch {epoch}")
            rec = _epoch_record(epoch, lr, float(np.mean(epoch_losses)), val_loss, report)
            history.append(rec)
            log.info("%s (%.1fs)", format_record(rec), time.perf_counter() - t0)
            if metrics_fh:
                metrics_fh.write(format_record(rec) + "\n")
                metrics_fh.flush()
            # F1@50 selects; validation loss breaks ties
            if report.f1[50] > best_f1 or (report.f1[50] == best_f1 and val_loss < best_sel_loss):
                best_f1, best_epoch, best_state = report.f1[50], epoch, model.state()
                best_sel_loss = val_loss
            if val_loss < best_val_loss:
                best_val_loss, stale = val_loss, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    stopped_early = True
                    break
    finally:
        if metrics_fh:
            metrics_fh.close()
    return FitResult(best_state, best_epoch, model.state(), history, stopped_early)
