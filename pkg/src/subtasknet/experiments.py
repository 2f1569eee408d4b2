"""Reusable experiment drivers: the loss ablation ladder and stage-wise
segment counts. Scripts in ``scripts/`` and the acceptance tests call these."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import data
from .loss import LossConfig, TransitionMatrix, invalid_transition_count
from .metrics import edit_score, evaluate, to_segments
from .model import ModelConfig, SegmentationModel
from .trainer import fit

log = logging.getLogger(__name__)

LADDER = (
    ("ce", 0.0, 0.0),
    ("ce+tmse", 0.15, 0.0),
    ("ce+tmse+trans", 0.15, 0.25),
)


@dataclass
class SetupConfig:
    """Synthetic data and model size shared by every arm of an experiment."""

    dim: int = 64
    noise: float = 1.0
    train_per_task: int = 20
    val_per_task: int = 5
    stages: int = 4
    layers: int = 10
    kernel: int = 3
    channels: int = 64
    schedule: str = "fibonacci"
    dropout: float = 0.5


def prepare(setup, seed):
    splits = data.generate_dataset(
        cfg=data.SyntheticGenConfig(dim=setup.dim, noise=setup.noise),
        train_per_task=setup.train_per_task,
        val_per_task=setup.val_per_task,
        seed=seed,
    )
    (train, val), _ = data.normalize_videos(splits["train"], splits["val"])
    return train, val


def build_model(setup, seed):
    cfg = ModelConfig(
        num_classes=len(data.VOCABULARY),
        feature_dim=setup.dim,
        stages=setup.stages,
        layers=setup.layers,
        kernel=setup.kernel,
        channels=setup.channels,
        schedule=setup.schedule,
        dropout=setup.dropout,
    )
    return SegmentationModel.init(cfg, np.random.default_rng([seed, 0]))


def train_arm(setup, train_cfg, loss_cfg, seed, train, val):
    M = TransitionMatrix.from_grammar(data.GRAMMAR, data.ClassVocabulary())
    model = build_model(setup, seed)
    result = fit(model, train, val, replace(loss_cfg), M, replace(train_cfg, seed=seed))
    model.load_state(result.best_state)
    return model, result, M


def raw_scores(model, videos, M):
    """Invalid-pair count and edit score of the raw final-stage argmax, per video."""
    invalid, edits, preds = [], [], []
    for v in videos:
        pred = model.predict(v.features)
        preds.append(list(pred))
        invalid.append(invalid_transition_count(pred, M))
        edits.append(edit_score(pred, v.labels))
    report = evaluate(preds, [list(v.labels) for v in videos])
    return float(np.mean(invalid)), float(np.mean(edits)), report


def ablation(setup, train_cfg, seeds, ladder=LADDER):
    """Per-seed rows ``(arm, seed, invalid, edit, f1@50, acc)`` over the loss ladder."""
    rows = []
    for seed in seeds:
        train, val = prepare(setup, seed)
        for arm, lam, gamma in ladder:
            model, _, M = train_arm(setup, train_cfg, LossConfig(lam=lam, gamma=gamma), seed, train, val)
            inv, ed, rep = raw_scores(model, val, M)
            log.info("seed=%d arm=%s invalid=%.3f edit=%.2f f1@50=%.2f", seed, arm, inv, ed, rep.f1[50])
            rows.append((arm, seed, inv, ed, rep.f1[50], rep.acc))
    return rows


def ladder_means(rows, ladder=LADDER):
    out = {}
    for arm, _, _ in ladder:
        sel = [r for r in rows if r[0] == arm]
        out[arm] = (float(np.mean([r[2] for r in sel])), float(np.mean([r[3] for r in sel])))
    return out


def stage_segment_counts(model, videos):
    """Raw-argmax segment count per stage for every video, shape (videos, stages)."""
    return np.array(
        [[len(to_segments(p)) for p in model.stage_predictions(v.features)] for v in videos]
    )
