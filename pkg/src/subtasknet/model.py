"""The full segmentation model (optional attention fusion + multi-stage TCN)
and its binary checkpoint format."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import FormatError
from .fusion import FusionParams, fuse_tensors
from .tcn import SCHEDULE_KINDS, MultiStageParams, make_schedule, multistage_forward

CKPT_MAGIC = b"SUBTCKPT"
CKPT_VERSION = 1
# magic, version, S, L, k, C, classes, D, schedule kind, fusion flag, dropout
_CKPT_HEADER = struct.Struct("<8sIIIIIIIBBd")


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    feature_dim: int  # per-modality D when fusion is on, file width otherwise
    stages: int = 4
    layers: int = 10
    kernel: int = 3
    channels: int = 64
    schedule: str = "fibonacci"
    fusion: bool = True
    dropout: float = 0.5


class SegmentationModel:
    def __init__(self, config, fusion, tcn):
        self.config = config
        self.fusion = fusion
        self.tcn = tcn
        self.schedule = make_schedule(config.schedule, config.layers)

    @classmethod
    def init(cls, config, rng):
        fusion = FusionParams.init(config.feature_dim, rng) if config.fusion else None
        tcn = MultiStageParams.init(
            config.feature_dim,
            config.channels,
            config.num_classes,
            config.stages,
            config.layers,
            config.kernel,
            rng,
            config.dropout,
        )
        return cls(config, fusion, tcn)

    def tensors(self):
        head = self.fusion.tensors() if self.fusion is not None else []
        return head + self.tcn.tensors()

    def zero_grad(self):
        for t in self.tensors():
            t.zero_grad()

    @property
    def input_dim(self):
        d = self.config.feature_dim
        return 2 * d if self.config.fusion else d

    def forward(self, features, training=False, rng=None):
        """Probability tensors of every stage for one ``T x input_dim`` feature matrix."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.input_dim:
            raise FormatError(f"model expects T x {self.input_dim} features, got {features.shape}")
        if self.fusion is not None:
            d = self.config.feature_dim
            x = fuse_tensors(nc.tensor(features[:, :d]), nc.tensor(features[:, d:]), self.fusion)
        else:
            x = nc.tensor(features)
        return multistage_forward(x, self.tcn, self.schedule, training, rng)

    def stage_predictions(self, features):
        return [p.data.argmax(axis=1) for p in self.forward(features)]

    def predict(self, features):
        return self.stage_predictions(features)[-1]

    def state(self):
        return [t.data.copy() for t in self.tensors()]

    def load_state(self, arrays):
        for t, a in zip(self.tensors(), arrays, strict=True):
            t.data[...] = a

    # ------------------------------------------------------------ checkpoint

    def save(self, path):
        c = self.config
        header = _CKPT_HEADER.pack(
            CKPT_MAGIC,
            CKPT_VERSION,
            c.stages,
            c.layers,
            c.kernel,
            c.channels,
            c.num_classes,
            c.feature_dim,
            SCHEDULE_KINDS.index(c.schedule),
            int(c.fusion),
            c.dropout,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            for t in self.tensors():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < _CKPT_HEADER.size:
            raise FormatError(f"{path}: truncated checkpoint header", offset=len(blob))
        magic, version, S, L, k, C, ncls, D, kind, fusion, p = _CKPT_HEADER.unpack_from(blob)
        if magic != CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint (magic {magic!r})", offset=0)
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=8)
        if kind >= len(SCHEDULE_KINDS):
            raise FormatError(f"{path}: unknown schedule kind {kind}", offset=36)
        config = ModelConfig(
            num_classes=ncls,
            feature_dim=D,
            stages=S,
            layers=L,
            kernel=k,
            channels=C,
            schedule=SCHEDULE_KINDS[kind],
            fusion=bool(fusion),
            dropout=p,
        )
        model = cls.init(config, np.random.default_rng(0))
        offset = _CKPT_HEADER.size
        for t in model.tensors():
            n = t.data.size * 8
            if offset + n > len(blob):
                raise FormatError(f"{path}: truncated parameter block", offset=offset)
            t.data[...] = np.frombuffer(blob, dtype="<f8", count=t.data.size, offset=offset).reshape(t.shape)
            offset += n
        if offset != len(blob):
            raise FormatError(f"{path}: {len(blob) - offset} trailing bytes", offset=offset)
        return model
