"""Vocabulary/grammar tables, split arithmetic, normalization, the synthetic
demonstration generator, and the on-disk feature/label/manifest formats."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, UsageError
from .fusion import FeatureSequence

VOCABULARY = ("reach", "pick", "move", "pour", "give", "place", "wipe", "retract")

# move appears twice in pick&pour; repeated entries are kept verbatim
GRAMMAR = {
    "pick&place": ("reach", "pick", "move", "place", "retract"),
    "pick&pour": ("reach", "pick", "move", "pour", "move", "place", "retract"),
    "cleaning": ("reach", "wipe", "retract"),
    "pick&give": ("reach", "pick", "give", "retract"),
}

# give has no published dominance entry; treated as appearance-driven
DOMINANCE = {
    "reach": "flow",
    "pick": "rgb",
    "move": "flow",
    "pour": "rgb",
    "give": "rgb",
    "place": "rgb",
    "wipe": "flow",
    "retract": "flow",
}

DEFAULT_DURATIONS = {
    "reach": (10, 20),
    "pick": (8, 16),
    "move": (12, 24),
    "pour": (14, 24),
    "give": (10, 18),
    "place": (8, 16),
    "wipe": (20, 36),
    "retract": (10, 20),
}


@dataclass(frozen=True)
class ClassVocabulary:
    names: tuple = VOCABULARY

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ConfigError("class names must be unique")

    def __len__(self):
        return len(self.names)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown sub-task {name!r}") from None

    def encode(self, names):
        return np.array([self.index(n) for n in names], dtype=np.int64)

    def decode(self, ids):
        return [self.names[int(i)] for i in ids]


def validate_grammar(grammar, vocabulary):
    for task, seq in grammar.items():
        if not seq:
            raise ConfigError(f"task {task!r} has an empty sub-task sequence")
        for name in seq:
            vocabulary.index(name)


# ---------------------------------------------------------------- splits


@dataclass
class SplitSpec:
    r_val: float
    videos_per_task: dict
    augmentations: tuple = ()


def _integral(x, what):
    r = round(x)
    if abs(x - r) > 1e-9:
        raise ConfigError(f"{what} = {x} is not an integer")
    return int(r)


def split_counts(spec):
    """Per-task augmented training counts, their total, and per-task holdout counts."""
    if not 0.0 <= spec.r_val < 1.0:
        raise ConfigError(f"r_val must lie in [0, 1), got {spec.r_val}")
    mult = 1 + len(spec.augmentations)
    train, val = {}, {}
    for task, n in spec.videos_per_task.items():
        val[task] = _integral(spec.r_val * n, f"validation count for {task}")
        train[task] = (n - val[task]) * mult
    return train, sum(train.values()), val


# ---------------------------------------------------------------- normalization


def _values(x):
    return x.values if isinstance(x, FeatureSequence) else np.asarray(x, dtype=np.float64)


def zscore_fit(train):
    if not train:
        raise UsageError("z-score statistics need at least one training sequence")
    frames = np.concatenate([_values(x) for x in train], axis=0)
    mean = frames.mean(axis=0)
    std = np.maximum(frames.std(axis=0), 1e-8)
    return mean, std


def zscore_apply(seqs, mean, std):
    return [(_values(x) - mean) / std for x in seqs]


def zscore_fit_apply(train, *others):
    """Fit on the concatenated training frames; normalize train and every other split."""
    mean, std = zscore_fit(train)
    normed = [zscore_apply(train, mean, std)] + [zscore_apply(o, mean, std) for o in others]
    return normed, (mean, std)


# ---------------------------------------------------------------- synthetic generator


@dataclass
class SyntheticGenConfig:
    dim: int = 64
    noise: float = 1.0
    durations: dict = field(default_factory=lambda: dict(DEFAULT_DURATIONS))
    dominance: dict = field(default_factory=lambda: dict(DOMINANCE))
    prototype_scale: float = 1.0
    prototype_seed: int = 7

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("feature dimension must be >= 1")
        if self.noise < 0:
            raise ConfigError("noise scale must be >= 0")
        for name, (lo, hi) in self.durations.items():
            if lo < 1 or hi < lo:
                raise ConfigError(f"bad duration range for {name}: ({lo}, {hi})")


def prototypes(vocabulary, cfg):
    """Per-class (rgb, flow) prototype matrices, each ``len(vocabulary) x dim``."""
    rng = np.random.default_rng(cfg.prototype_seed)
    shape = (len(vocabulary), cfg.dim)
    rgb = cfg.prototype_scale * rng.standard_normal(shape)
    flow = cfg.prototype_scale * rng.standard_normal(shape)
    return rgb, flow


def generate_demo(task, grammar, cfg, rng, vocabulary=ClassVocabulary()):
    """One synthetic demonstration of ``task``.

    Returns ``(rgb, flow, labels)``: two T x dim FeatureSequences and integer
    labels. Each class's prototype sits only in its dominant modality; the
    other modality carries noise alone.
    """
    try:
        seq = grammar[task]
    except KeyError:
        raise KeyError(f"unknown task {task!r}; known: {sorted(grammar)}") from None
    proto_rgb, proto_flow = prototypes(vocabulary, cfg)
    labels = []
    for name in seq:
        lo, hi = cfg.durations[name]
        labels += [vocabulary.index(name)] * int(rng.integers(lo, hi + 1))
    labels = np.array(labels, dtype=np.int64)
    T = len(labels)
    rgb = cfg.noise * rng.standard_normal((T, cfg.dim))
    flow = cfg.noise * rng.standard_normal((T, cfg.dim))
    for c in np.unique(labels):
        rows = labels == c
        if cfg.dominance[vocabulary.names[c]] == "rgb":
            rgb[rows] += proto_rgb[c]
        else:
            flow[rows] += proto_flow[c]
    return FeatureSequence(rgb, "rgb"), FeatureSequence(flow, "flow"), labels


def jitter(features, scale, rng):
    """Feature-level augmentation: additive Gaussian noise."""
    return features + scale * rng.standard_normal(features.shape)


def video_rng(seed, task_index, video_index, stream=0):
    return np.random.default_rng([seed, task_index, video_index, stream])


@dataclass
class Video:
    name: str
    task: str
    features: np.ndarray  # T x D_file; [rgb | flow] when fusion is used
    labels: np.ndarray

    @property
    def T(self):
        return len(self.labels)


def generate_dataset(
    grammar=GRAMMAR,
    cfg=None,
    train_per_task=20,
    val_per_task=5,
    n_aug=0,
    aug_scale=0.1,
    seed=0,
    vocabulary=ClassVocabulary(),
):
    """``{"train": [...], "val": [...]}`` of Videos with [rgb | flow] features."""
    cfg = cfg or SyntheticGenConfig()
    out = {"train": [], "val": []}
    for ti, task in enumerate(grammar):
        for vi in range(train_per_task + val_per_task):
            rgb, flow, labels = generate_demo(task, grammar, cfg, video_rng(seed, ti, vi), vocabulary)
            # round through float32 so in-memory data equals what the feature file stores
            feats = np.concatenate([rgb.values, flow.values], axis=1).astype(np.float32).astype(np.float64)
            split = "train" if vi < train_per_task else "val"
            slug = task.replace("&", "_")
            out[split].append(Video(f"{slug}_{vi:03d}", task, feats, labels))
            if split == "train":
                for a in range(n_aug):
                    aug = jitter(feats, aug_scale, video_rng(seed, ti, vi, a + 1))
                    aug = aug.astype(np.float32).astype(np.float64)
                    out[split].append(Video(f"{slug}_{vi:03d}_aug{a + 1}", task, aug, labels))
    return out


# ---------------------------------------------------------------- file formats

FEATURE_MAGIC = b"SSEQ1"
_HEADER = struct.Struct("<5sII")


def write_features(path, values):
    values = np.asarray(values)
    if values.ndim != 2:
        raise FormatError(f"features must be T x D, got shape {values.shape}")
    T, D = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, T, D))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_features(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(blob))
    magic, T, D = _HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    need = _HEADER.size + 4 * T * D
    if len(blob) != need:
        raise FormatError(f"{path}: expected {need} bytes for {T}x{D}, found {len(blob)}", offset=len(blob))
    if T < 1 or D < 1:
        raise FormatError(f"{path}: empty feature matrix {T}x{D}", offset=5)
    arr = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(T, D)
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise FormatError(f"{path}: non-finite value", offset=_HEADER.size + 4 * bad)
    return arr.astype(np.float64)


def write_labels(path, names):
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{n}\n" for n in names)


def read_labels(path):
    with open(path, encoding="utf-8") as fh:
        names = [ln.rstrip("\n") for ln in fh]
    if not names:
        raise FormatError(f"{path}: empty label file")
    for i, n in enumerate(names):
        if not n or n != n.strip():
            raise FormatError(f"{path}: bad class name on line {i + 1}: {n!r}")
    return names


def write_mapping(path, vocabulary):
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{i} {n}\n" for i, n in enumerate(vocabulary.names))


def read_mapping(path):
    names = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2 or not parts[0].isdigit():
                raise FormatError(f"{path}: line {lineno} is not 'id name': {line.rstrip()!r}")
            i = int(parts[0])
            if i in names:
                raise FormatError(f"{path}: duplicate id {i} on line {lineno}")
            if parts[1] in names.values():
                raise FormatError(f"{path}: duplicate name {parts[1]!r} on line {lineno}")
            names[i] = parts[1]
    if sorted(names) != list(range(len(names))):
        raise FormatError(f"{path}: ids are not dense from 0")
    return ClassVocabulary(tuple(names[i] for i in range(len(names))))


@dataclass
class ManifestEntry:
    split: str
    task: str
    feature_path: str
    label_path: str


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.split}\t{e.task}\t{e.feature_path}\t{e.label_path}\n")


def read_manifest(path):
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise FormatError(f"{path}: line {lineno} needs 4 tab-separated fields")
            entries.append(ManifestEntry(*parts))
    return entries


def load_split(manifest_path, vocabulary, split=None):
    """Videos listed in a manifest; relative paths resolve against its directory."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    videos = []
    for e in read_manifest(manifest_path):
        if split is not None and e.split != split:
            continue
        fpath = os.path.join(root, e.feature_path)
        lpath = os.path.join(root, e.label_path)
        feats = read_features(fpath)
        try:
            labels = vocabulary.encode(read_labels(lpath))
        except KeyError as exc:
            raise FormatError(f"{lpath}: {exc.args[0]}") from None
        if len(labels) != feats.shape[0]:
            raise FormatError(f"{lpath}: {len(labels)} labels for {feats.shape[0]} feature rows")
        name = os.path.splitext(os.path.basename(e.feature_path))[0]
        videos.append(Video(name, e.task, feats, labels))
    return videos


def save_dataset(out_dir, splits, vocabulary=ClassVocabulary()):
    """Write features, labels, mapping and manifest under ``out_dir``."""
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    entries = []
    for split, videos in splits.items():
        for v in videos:
            fp = os.path.join("features", f"{v.name}.sseq")
            lp = os.path.join("labels", f"{v.name}.txt")
            write_features(os.path.join(out_dir, fp), v.features)
            write_labels(os.path.join(out_dir, lp), vocabulary.decode(v.labels))
            entries.append(ManifestEntry(split, v.task, fp, lp))
    write_mapping(os.path.join(out_dir, "mapping.txt"), vocabulary)
    write_manifest(os.path.join(out_dir, "manifest.tsv"), entries)
    return os.path.join(out_dir, "manifest.tsv")


def normalize_videos(train, *others):
    """z-score every split with statistics from ``train``; returns (splits, (mean, std))."""
    mean, std = zscore_fit([v.features for v in train])
    out = []
    for videos in (train,) + others:
        out.append([Video(v.name, v.task, (v.features - mean) / std, v.labels) for v in videos])
    return out, (mean, std)
