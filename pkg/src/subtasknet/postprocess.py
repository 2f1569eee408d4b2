"""Label-sequence cleanup applied to predictions at inference time."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .errors import ParameterError
from .metrics import expand, to_segments


def _mode_pass(labels, half):
    T = len(labels)
    out = []
    for t, centre in enumerate(labels):
        r = min(half, t, T - 1 - t)  # shrink symmetrically at the edges
        counts = Counter(labels[t - r : t + r + 1])
        top = max(counts.values())
        if counts[centre] == top:
            out.append(centre)
        else:
            out.append(next(lab for lab, c in counts.items() if c == top))
    return out


def median_filter(labels, window):
    """Sliding-window mode filter, repeated until the sequence stops changing.

    Each output frame takes the most frequent label in a centred window; a
    tie keeps the centre label when it is among the modes, otherwise the mode
    seen first. One pass is not idempotent on label sequences, so passes are
    repeated up to the root sequence (a pass that reproduces its input).
    """
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"median window must be odd and >= 1, got {window}")
    labels = list(labels)
    if window == 1:
        return labels
    seen = {tuple(labels)}
    while True:
        nxt = _mode_pass(labels, window // 2)
        key = tuple(nxt)
        if nxt == labels or key in seen:
            return nxt
        seen.add(key)
        labels = nxt


def _neighbour_target(segs, i):
    left = segs[i - 1] if i > 0 else None
    right = segs[i + 1] if i + 1 < len(segs) else None
    if right is None:
        return left.label
    if left is None:
        return right.label
    len_l, len_r = left.end - left.start, right.end - right.start
    return right.label if len_r > len_l else left.label


def collapse_short_runs(labels, min_len):
    """Merge runs shorter than ``min_len`` into their longer neighbour.

    The shortest offending run is merged first (the latest one on equal
    lengths, so earlier runs survive) and the sequence re-segmented before
    the next decision. Equal-length neighbours: the preceding run wins.
    """
    if min_len < 1:
        raise ParameterError(f"min_len must be >= 1, got {min_len}")
    labels = list(labels)
    if min_len == 1 or not labels:
        return labels
    segs = to_segments(labels)
    while len(segs) > 1:
        short = [i for i, s in enumerate(segs) if s.end - s.start < min_len]
        if not short:
            break
        i = min(short, key=lambda j: (segs[j].end - segs[j].start, -j))
        target = _neighbour_target(segs, i)
        s = segs[i]
        labels[s.start : s.end] = [target] * (s.end - s.start)
        segs = to_segments(labels)
    return expand(segs)


@dataclass
class PostprocessConfig:
    median: bool = True
    window: int = 3
    collapse: bool = True
    min_len: int = 5


def postprocess(labels, cfg=None):
    """Median filter first, then run collapsing."""
    cfg = cfg or PostprocessConfig()
    labels = list(labels)
    if cfg.median:
        labels = median_filter(labels, cfg.window)
    if cfg.collapse:
        labels = collapse_short_runs(labels, cfg.min_len)
    return labels
