"""Per-frame, per-channel gated blend of RGB and optical-flow features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import DimensionError, NumericalError, ParameterError

MODALITIES = ("rgb", "flow", "fused")


@dataclass
class FeatureSequence:
    values: np.ndarray
    modality: str = "fused"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise DimensionError(f"feature sequence must be T x D, got {self.values.shape}")
        if self.modality not in MODALITIES:
            raise ParameterError(f"unknown modality {self.modality!r}")
        if not np.isfinite(self.values).all():
            raise NumericalError("feature sequence contains non-finite values")

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def D(self):
        return self.values.shape[1]


@dataclass
class FusionParams:
    W_a: nc.Tensor  # D x 2D
    b_a: nc.Tensor  # D

    @property
    def dim(self):
        return self.b_a.shape[0]

    def tensors(self):
        return [self.W_a, self.b_a]

    @classmethod
    def init(cls, dim, rng):
        bound = 1.0 / np.sqrt(2 * dim)
        W = rng.uniform(-bound, bound, size=(dim, 2 * dim))
        return cls(nc.tensor(W, requires_grad=True), nc.tensor(np.zeros(dim), requires_grad=True))


def _as_tensor(x):
    if isinstance(x, FeatureSequence):
        return nc.tensor(x.values)
    return x if isinstance(x, nc.Tensor) else nc.tensor(x)


def _check(rgb, flow, params):
    if rgb.shape != flow.shape:
        raise DimensionError(f"rgb {rgb.shape} and flow {flow.shape} must match")
    if rgb.shape[1] != params.dim or params.W_a.shape != (params.dim, 2 * params.dim):
        raise DimensionError(
            f"fusion params W_a {params.W_a.shape} do not fit feature width {rgb.shape[1]}"
        )


def attention_coefficients(rgb, flow, params):
    """alpha(t) = sigmoid(W_a [rgb_t; flow_t] + b_a), shape T x D, entries in (0, 1)."""
    rgb, flow = _as_tensor(rgb), _as_tensor(flow)
    _check(rgb, flow, params)
    return nc.sigmoid(nc.linear(nc.concat_cols(rgb, flow), params.W_a, params.b_a))


def fuse_tensors(rgb, flow, params):
    rgb, flow = _as_tensor(rgb), _as_tensor(flow)
    alpha = attention_coefficients(rgb, flow, params)
    return nc.add(nc.mul(alpha, rgb), nc.mul(nc.sub(1.0, alpha), flow))


def fuse(rgb, flow, params):
    """Fused FeatureSequence with the same width D as each input."""
    out = fuse_tensors(rgb, flow, params)
    return FeatureSequence(out.data.copy(), "fused")
