"""Frame accuracy, segmental F1@k and edit score (all in percent)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, ParameterError, UsageError

F1_THRESHOLDS = (10, 25, 50)


class Segment(NamedTuple):
    label: int
    start: int  # inclusive
    end: int  # exclusive


def to_segments(labels):
    labels = list(labels)
    if not labels:
        raise UsageError("cannot segment an empty label sequence")
    out = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            out.append(Segment(labels[start], start, t))
            start = t
    return out


def expand(segments):
    out = []
    for seg in segments:
        out.extend([seg.label] * (seg.end - seg.start))
    return out


def _pair(pred, gt):
    pred, gt = list(pred), list(gt)
    if len(pred) != len(gt):
        raise DimensionError(f"prediction has {len(pred)} frames, ground truth {len(gt)}")
    if not gt:
        raise UsageError("empty sequences")
    return pred, gt


def frame_accuracy(pred, gt):
    pred, gt = _pair(pred, gt)
    return 100.0 * np.mean(np.asarray(pred) == np.asarray(gt))


def iou(a, b):
    if a.label != b.label:
        return 0.0
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    return inter / (max(a.end, b.end) - min(a.start, b.start))


def _match_greedy(ps, gs, threshold):
    taken = [False] * len(gs)
    tp = 0
    for p in ps:
        best, best_j = 0.0, -1
        for j, g in enumerate(gs):
            v = iou(p, g)
            if not taken[j] and v > best:  # strict: ties keep the earliest GT segment
                best, best_j = v, j
        if best_j >= 0 and best >= threshold:
            taken[best_j] = True
            tp += 1
    return tp


def _match_mstcn(ps, gs, threshold):
    # reference MS-TCN evaluation: argmax over all GT segments, a taken best is a miss
    hits = [False] * len(gs)
    tp = 0
    for p in ps:
        scores = [iou(p, g) for g in gs]
        j = int(np.argmax(scores))
        if scores[j] >= threshold and not hits[j]:
            hits[j] = True
            tp += 1
    return tp


def _match_optimal(ps, gs, threshold):
    """Maximum-cardinality one-to-one matching over pairs with IoU >= threshold."""
    edges = [[j for j, g in enumerate(gs) if iou(p, g) >= threshold and iou(p, g) > 0] for p in ps]
    owner = [-1] * len(gs)

    def augment(i, seen):
        for j in edges[i]:
            if j in seen:
                continue
            seen.add(j)
            if owner[j] < 0 or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(augment(i, set()) for i in range(len(ps)))


_MATCHERS = {"optimal": _match_optimal, "greedy": _match_greedy, "mstcn": _match_mstcn}


def f1_at(pred, gt, threshold, matching="optimal"):
    """Segmental F1 at an IoU threshold given as a fraction in (0, 1]."""
    if not 0.0 < threshold <= 1.0:
        raise ParameterError(f"IoU threshold must lie in (0, 1], got {threshold}")
    try:
        matcher = _MATCHERS[matching]
    except KeyError:
        raise ParameterError(f"unknown matching {matching!r}") from None
    pred, gt = _pair(pred, gt)
    ps, gs = to_segments(pred), to_segments(gt)
    tp = matcher(ps, gs, threshold)
    if tp == 0:
        return 0.0
    precision = tp / len(ps)
    recall = tp / len(gs)
    return 100.0 * 2 * precision * recall / (precision + recall)


def levenshtein(a, b):
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def edit_score(pred, gt):
    pa = [s.label for s in to_segments(pred)]
    ga = [s.label for s in to_segments(gt)]
    dist = levenshtein(pa, ga)
    return max(0.0, 100.0 * (1.0 - dist / max(len(pa), len(ga))))


@dataclass
class MetricReport:
    acc: float
    f1: dict = field(default_factory=dict)
    edit: float = 0.0
    n_videos: int = 1

    def as_records(self):
        rec = {"acc": self.acc}
        for k in sorted(self.f1):
            rec[f"f1@{k}"] = self.f1[k]
        rec["edit"] = self.edit
        return rec

    def to_kv(self):
        return "\n".join(f"{k}={v:.4f}" for k, v in self.as_records().items())

    def to_table(self):
        keys = list(self.as_records())
        head = " ".join(f"{k:>8}" for k in keys)
        vals = " ".join(f"{v:8.2f}" for v in self.as_records().values())
        return f"{head}\n{vals}"


def evaluate(preds, gts, thresholds=F1_THRESHOLDS, matching="optimal"):
    """Aggregate over videos MS-TCN style.

    Accuracy pools frames; F1 pools segment TP/FP/FN over videos; edit is the
    per-video mean.
    """
    preds, gts = list(preds), list(gts)
    if not preds or len(preds) != len(gts):
        raise DimensionError(f"{len(preds)} predictions for {len(gts)} ground truths")
    correct = frames = 0
    edits = []
    counts = {k: [0, 0, 0] for k in thresholds}
    for p, g in zip(preds, gts):
        p, g = _pair(p, g)
        correct += int(np.sum(np.asarray(p) == np.asarray(g)))
        frames += len(g)
        edits.append(edit_score(p, g))
        ps, gs = to_segments(p), to_segments(g)
        for k in thresholds:
            tp = _MATCHERS[matching](ps, gs, k / 100.0)
            c = counts[k]
            c[0] += tp
            c[1] += len(ps) - tp
            c[2] += len(gs) - tp
    f1 = {}
    for k, (tp, fp, fn) in counts.items():
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1[k] = 100.0 * 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return MetricReport(
        acc=100.0 * correct / frames, f1=f1, edit=float(np.mean(edits)), n_videos=len(preds)
    )
