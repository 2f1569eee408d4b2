"""Dense float64 tensors with reverse-mode differentiation.

Only what the segmentation network, its losses and the optimizer need:
2-D time-major arrays, a handful of pointwise ops, dilated 1-D
convolution and row softmax. Each op that touches a ``requires_grad``
input records its parents and a closure mapping the upstream gradient
to per-parent gradients; :func:`backward` replays them in reverse
topological order.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericalError, ParameterError, UsageError

LOG_CLAMP = 1e-12
DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=DTYPE)
        if not np.isfinite(arr).all():
            raise NumericalError("tensor values must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("division is only supported by a python scalar")
        return mul(self, 1.0 / float(other))


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn, op):
    if not np.isfinite(data).all():
        raise NumericalError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------- graph


class ComputeTape:
    """Differentiable ops reachable from a root, in topological order."""

    def __init__(self, nodes):
        self.nodes = list(nodes)

    def __len__(self):
        return len(self.nodes)

    @classmethod
    def from_root(cls, root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)


def backward(root, tape=None):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every grad leaf."""
    if not isinstance(root, Tensor) or root.data.size != 1:
        raise UsageError("backward() needs a scalar root tensor")
    if not root.requires_grad:
        return
    if tape is None:
        tape = ComputeTape.from_root(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------- pointwise


def _check_binary(a, b, op):
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g, shape):
    # scalar-broadcast operands receive the summed gradient
    return g if g.shape == shape else np.asarray(g.sum()).reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "add")

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "sub")

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "mul")

    def bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw, "mul")


def relu(x):
    mask = x.data > 0.0

    def bw(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), (x,), bw, "relu")


def sigmoid(x):
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), bw, "sigmoid")


def log(x):
    """Natural log with inputs clamped below at ``LOG_CLAMP``."""
    live = x.data >= LOG_CLAMP
    safe = np.where(live, x.data, LOG_CLAMP)

    def bw(g):
        return (np.where(live, g / safe, 0.0),)

    return _result(np.log(safe), (x,), bw, "log")


def minimum(x, cap):
    """``min(x, cap)``; the gradient is zero wherever the cap binds (x >= cap)."""
    cap = float(cap)
    live = x.data < cap

    def bw(g):
        return (g * live,)

    return _result(np.where(live, x.data, cap), (x,), bw, "min_scalar")


def absolute(x):
    sign = np.sign(x.data)

    def bw(g):
        return (g * sign,)

    return _result(np.abs(x.data), (x,), bw, "abs")


def square(x):
    def bw(g):
        return (2.0 * g * x.data,)

    return _result(x.data * x.data, (x,), bw, "square")


_ELEMENTWISE = {
    "relu": relu,
    "sigmoid": sigmoid,
    "log": log,
    "add": add,
    "sub": sub,
    "mul": mul,
    "min": minimum,
    "abs": absolute,
    "square": square,
}


def elementwise(kind, *operands):
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ParameterError(f"unknown elementwise op {kind!r}") from None
    return fn(*operands)


# ---------------------------------------------------------------- reductions / reshaping


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), bw, "sum")


def mean(x, axis=None):
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def slice_rows(x, start, stop):
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _result(x.data[start:stop].copy(), (x,), bw, "slice_rows")


def gather(x, index):
    """Pick ``x[t, index[t]]`` for every row t."""
    index = np.asarray(index, dtype=np.intp)
    if x.data.ndim != 2 or index.shape != (x.shape[0],):
        raise DimensionError(f"gather: {x.shape} with index of shape {index.shape}")
    rows = np.arange(x.shape[0])

    def bw(g):
        full = np.zeros(x.shape)
        full[rows, index] = g
        return (full,)

    return _result(x.data[rows, index], (x,), bw, "gather")


def concat_cols(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols: {a.shape} and {b.shape}")
    split = a.shape[1]

    def bw(g):
        return g[:, :split], g[:, split:]

    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), bw, "concat")


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), bw, "matmul")


# ---------------------------------------------------------------- layers


def softmax_rows(logits):
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_rows expects T x C, got {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _result(p, (logits,), bw, "softmax")


def linear(x, weight, bias=None):
    """Per-time-step affine map: ``x @ weight.T + bias`` (a 1x1 convolution)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} for {weight.shape[0]} outputs")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        grads = (g @ weight.data, g.T @ x.data)
        return grads + ((g.sum(axis=0),) if bias is not None else ())

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bw, "linear")


def _im2col(x, k, dilation):
    T, cin = x.shape
    pad = dilation * (k - 1) // 2
    xp = np.zeros((T + 2 * pad, cin))
    xp[pad : pad + T] = x
    return np.concatenate([xp[j * dilation : j * dilation + T] for j in range(k)], axis=1)


def conv1d_dilated(x, kernel, bias, dilation):
    """Same-length dilated temporal convolution with zero padding.

    ``out[t, co] = bias[co] + sum_{ci, j} kernel[co, ci, j] * x[t + (j - (k-1)/2) * dilation, ci]``
    """
    if int(dilation) != dilation or dilation < 1:
        raise ParameterError(f"dilation must be a positive integer, got {dilation}")
    dilation = int(dilation)
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise DimensionError(f"conv1d: input {x.shape}, kernel {kernel.shape}")
    cout, cin, k = kernel.shape
    if x.shape[1] != cin or bias.shape != (cout,):
        raise DimensionError(
            f"conv1d: input {x.shape} / kernel {kernel.shape} / bias {bias.shape}"
        )
    if k % 2 == 0:
        raise ParameterError(f"kernel size must be odd, got {k}")
    T = x.shape[0]
    pad = dilation * (k - 1) // 2
    cols = _im2col(x.data, k, dilation)
    wmat = kernel.data.transpose(2, 1, 0).reshape(k * cin, cout)
    out = cols @ wmat + bias.data

    def bw(g):
        gcols = g @ wmat.T
        gxp = np.zeros((T + 2 * pad, cin))
        for j in range(k):
            gxp[j * dilation : j * dilation + T] += gcols[:, j * cin : (j + 1) * cin]
        gk = (cols.T @ g).reshape(k, cin, cout).transpose(2, 1, 0)
        return gxp[pad : pad + T], gk, g.sum(axis=0)

    return _result(out, (x, kernel, bias), bw, "conv1d")


def dropout(x, p, rng, training):
    """Inverted dropout; the identity outside training or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(mask))
