"""Composite segmentation objective: weighted cross-entropy, truncated
temporal MSE on log-probabilities, and the transition-aware penalty."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import DimensionError, FormatError, ParameterError, UsageError


@dataclass
class LossConfig:
    lam: float = 0.15
    gamma: float = 0.25
    tau: float = 4.0
    class_weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ParameterError("lambda and gamma must be nonnegative")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=np.float64)
            if not (np.isfinite(w).all() and (w > 0).all()):
                raise ParameterError("class weights must be finite and positive")
            self.class_weights = w


class TransitionMatrix:
    """Binary C x C matrix with M[i, j] = 1 iff switching i -> j is invalid."""

    def __init__(self, M):
        M = np.asarray(M)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionError(f"transition matrix must be square, got {M.shape}")
        if not np.isin(M, (0, 1)).all():
            raise ParameterError("transition matrix entries must be 0 or 1")
        if np.diag(M).any():
            raise ParameterError("self-transitions must be valid (zero diagonal)")
        self.M = M.astype(np.float64)

    @property
    def num_classes(self):
        return self.M.shape[0]

    def is_invalid(self, i, j):
        return bool(self.M[i, j])

    @classmethod
    def from_grammar(cls, grammar, vocabulary):
        """i -> j is valid iff j == i or j directly follows i in some task sequence."""
        n = len(vocabulary)
        M = np.ones((n, n), dtype=np.int64)
        np.fill_diagonal(M, 0)
        for seq in grammar.values():
            ids = [vocabulary.index(name) for name in seq]
            for a, b in zip(ids, ids[1:]):
                M[a, b] = 0
        return cls(M)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.num_classes}\n")
            for row in self.M.astype(int):
                fh.write(" ".join(str(v) for v in row) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            lines = [ln.split() for ln in fh if ln.strip()]
        try:
            n = int(lines[0][0])
            rows = [[int(v) for v in ln] for ln in lines[1:]]
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}: malformed transition matrix ({exc})") from None
        if len(rows) != n or any(len(r) != n for r in rows):
            raise FormatError(f"{path}: expected {n} rows of {n} entries")
        return cls(np.array(rows))


def inverse_frequency_weights(label_seqs, num_classes):
    """w_c = N / (C * count_c), rescaled to mean 1. Unseen classes get the largest weight."""
    counts = np.zeros(num_classes)
    for labels in label_seqs:
        counts += np.bincount(np.asarray(labels), minlength=num_classes)
    total = counts.sum()
    seen = counts > 0
    w = np.zeros(num_classes)
    w[seen] = total / (num_classes * counts[seen])
    if not seen.all():
        w[~seen] = w[seen].max() if seen.any() else 1.0
    return w / w.mean()


def _labels(labels, T):
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (T,):
        raise DimensionError(f"{labels.shape[0] if labels.ndim else 0} labels for {T} frames")
    return labels


def cross_entropy(probs, labels, weights=None):
    T, C = probs.shape
    labels = _labels(labels, T)
    if labels.min() < 0 or labels.max() >= C:
        raise DimensionError(f"label ids must lie in [0, {C})")
    nll = nc.log(nc.gather(probs, labels))
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (C,):
            raise DimensionError(f"{weights.shape} class weights for {C} classes")
        nll = nc.mul(nll, nc.tensor(weights[labels]))
    return nc.mul(nc.sum(nll), -1.0 / T)


def t_mse(probs, tau):
    T = probs.shape[0]
    if T < 2:
        warnings.warn("t_mse on a sequence shorter than 2 frames is 0", RuntimeWarning, stacklevel=2)
        return nc.tensor(0.0)
    logp = nc.log(probs)
    diff = nc.sub(nc.slice_rows(logp, 1, T), nc.slice_rows(logp, 0, T - 1))
    per_step = nc.minimum(nc.sum(nc.square(diff), axis=1), tau)
    return nc.mean(per_step)


def transition_weights(probs, M):
    """w_t = P_{t-1}^T M P_t for t = 1..T-1."""
    T, C = probs.shape
    Mt = M if isinstance(M, TransitionMatrix) else TransitionMatrix(M)
    if Mt.num_classes != C:
        raise DimensionError(f"{Mt.num_classes}x{Mt.num_classes} transition matrix for {C} classes")
    prev = nc.slice_rows(probs, 0, T - 1)
    cur = nc.slice_rows(probs, 1, T)
    return nc.sum(nc.mul(nc.matmul(prev, nc.tensor(Mt.M)), cur), axis=1), prev, cur


def transition_loss(probs, M):
    T = probs.shape[0]
    if T < 2:
        return nc.tensor(0.0)
    w, prev, cur = transition_weights(probs, M)
    gap = nc.sum(nc.absolute(nc.sub(cur, prev)), axis=1)
    return nc.mean(nc.mul(w, gap))


def composite_loss(stage_outputs, labels, config, M=None):
    """Sum over stages of CE + lam * T-MSE + gamma * transition term."""
    if not stage_outputs:
        raise UsageError("composite_loss needs at least one stage output")
    if config.gamma > 0 and M is None:
        raise UsageError("gamma > 0 requires a transition matrix")
    total = None
    for probs in stage_outputs:
        term = cross_entropy(probs, labels, config.class_weights)
        if config.lam > 0:
            term = nc.add(term, nc.mul(t_mse(probs, config.tau), config.lam))
        if config.gamma > 0:
            term = nc.add(term, nc.mul(transition_loss(probs, M), config.gamma))
        total = term if total is None else nc.add(total, term)
    return total


def invalid_transition_count(labels, M):
    """Adjacent frame pairs whose label switch is marked invalid."""
    labels = np.asarray(labels)
    Mt = M.M if isinstance(M, TransitionMatrix) else np.asarray(M)
    return int(Mt[labels[:-1], labels[1:]].sum())
