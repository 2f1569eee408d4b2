"""Dilated residual temporal convolution stages and multi-stage refinement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DimensionError, ParameterError, UsageError

SCHEDULE_KINDS = ("exponential", "fibonacci")


@dataclass(frozen=True)
class DilationSchedule:
    kind: str
    dilations: tuple

    @property
    def L(self):
        return len(self.dilations)


def fibonacci(n):
    """F_n with F_1 = F_2 = 1."""
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


def make_schedule(kind, L):
    if int(L) != L or L < 1:
        raise ParameterError(f"layer count must be a positive integer, got {L}")
    L = int(L)
    if kind == "exponential":
        dilations = tuple(2**l for l in range(L))
    elif kind == "fibonacci":
        # F_2, F_3, F_4, ... = 1, 2, 3, 5, ... (no repeated 1)
        dilations = tuple(fibonacci(l + 2) for l in range(L))
    else:
        raise ParameterError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    return DilationSchedule(kind, dilations)


def receptive_field(schedule, k):
    if k < 1 or k % 2 == 0:
        raise ParameterError(f"kernel size must be odd and positive, got {k}")
    return 1 + (k - 1) * sum(schedule.dilations)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return nc.tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(n):
    return nc.tensor(np.zeros(n), requires_grad=True)


@dataclass
class StageParams:
    proj_W: nc.Tensor  # C x W_in
    proj_b: nc.Tensor  # C
    conv_W: list  # L tensors, C x C x k
    conv_b: list  # L tensors, C
    head_W: nc.Tensor  # classes x C
    head_b: nc.Tensor  # classes
    dropout: float = 0.5

    @property
    def in_width(self):
        return self.proj_W.shape[1]

    @property
    def channels(self):
        return self.proj_W.shape[0]

    @property
    def kernel_size(self):
        return self.conv_W[0].shape[2] if self.conv_W else 1

    @property
    def num_classes(self):
        return self.head_W.shape[0]

    @property
    def L(self):
        return len(self.conv_W)

    def tensors(self):
        out = [self.proj_W, self.proj_b]
        for W, b in zip(self.conv_W, self.conv_b):
            out += [W, b]
        return out + [self.head_W, self.head_b]

    @classmethod
    def init(cls, in_width, channels, num_classes, L, k, rng, dropout=0.5):
        if k % 2 == 0:
            raise ParameterError(f"kernel size must be odd, got {k}")
        conv_W = [_uniform(rng, channels * k, (channels, channels, k)) for _ in range(L)]
        conv_b = [_zeros(channels) for _ in range(L)]
        return cls(
            proj_W=_uniform(rng, in_width, (channels, in_width)),
            proj_b=_zeros(channels),
            conv_W=conv_W,
            conv_b=conv_b,
            head_W=_uniform(rng, channels, (num_classes, channels)),
            head_b=_zeros(num_classes),
            dropout=dropout,
        )


@dataclass
class MultiStageParams:
    stages: list = field(default_factory=list)

    @property
    def S(self):
        return len(self.stages)

    def tensors(self):
        return [t for stage in self.stages for t in stage.tensors()]

    @classmethod
    def init(cls, feature_dim, channels, num_classes, S, L, k, rng, dropout=0.5):
        if S < 1:
            raise ParameterError(f"stage count must be >= 1, got {S}")
        stages = [StageParams.init(feature_dim, channels, num_classes, L, k, rng, dropout)]
        for _ in range(S - 1):
            stages.append(StageParams.init(num_classes, channels, num_classes, L, k, rng, dropout))
        return cls(stages)


def stage_forward(x, params, schedule, training=False, rng=None):
    """One dilated residual stage. Returns ``(logits, probs)`` as T x classes tensors."""
    if params.L != schedule.L:
        raise ConfigError(f"stage has {params.L} layers but schedule has {schedule.L}")
    if x.shape[1] != params.in_width:
        raise DimensionError(f"stage expects width {params.in_width}, got input {x.shape}")
    if training and params.dropout > 0 and rng is None:
        raise UsageError("training-mode forward needs an rng for dropout")
    h = nc.linear(x, params.proj_W, params.proj_b)
    for W, b, d in zip(params.conv_W, params.conv_b, schedule.dilations):
        z = nc.relu(nc.conv1d_dilated(h, W, b, d))
        h = nc.add(nc.dropout(z, params.dropout, rng, training), h)
    logits = nc.linear(h, params.head_W, params.head_b)
    return logits, nc.softmax_rows(logits)


def multistage_forward(features, params, schedule, training=False, rng=None):
    """Probability sequences of every stage; stage s > 1 consumes stage s-1's probabilities."""
    if not params.stages:
        raise ConfigError("multi-stage model has no stages")
    outputs = []
    x = features
    for stage in params.stages:
        _, probs = stage_forward(x, stage, schedule, training, rng)
        outputs.append(probs)
        x = probs
    return outputs


def probe_receptive_field(params, schedule, T, t0=None, seed=0):
    """Measured span of input steps that influence output step ``t0``.

    Backpropagates a random projection of the logits at ``t0`` to the input
    and returns ``(first, last)`` indices with non-zero gradient.
    """
    rng = np.random.default_rng(seed)
    t0 = T // 2 if t0 is None else t0
    x = nc.tensor(rng.standard_normal((T, params.in_width)), requires_grad=True)
    logits, _ = stage_forward(x, params, schedule, training=False)
    probe = np.zeros(logits.shape)
    probe[t0] = rng.standard_normal(logits.shape[1])
    nc.backward(nc.sum(nc.mul(logits, nc.tensor(probe))))
    touched = np.flatnonzero(np.abs(x.grad).sum(axis=1) > 0.0)
    return int(touched.min()), int(touched.max())
