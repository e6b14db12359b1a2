"""Reverse-mode automatic differentiation on float64 numpy arrays.

The engine is deliberately small: a Tensor wraps an ndarray, a Graph is a
flat tape of operation records built define-by-run, and backward() walks the
tape in exact reverse construction order. Only the shapes this project needs
are supported (scalars, vectors, and 2-D batch-by-feature matrices); there is
no general broadcasting beyond the bias row-vector case.

All stochastic operations take externally supplied noise, so a training step
is a pure function of (parameters, batch, noise). Ops executed while no Graph
is recording just compute values, which is how evaluation rollouts avoid tape
overhead.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class GraphError(RuntimeError):
    """Misuse of the tape: nested recording, repeated backward, and so on."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"tensors are at most 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """A float64 array plus bookkeeping for the tape.

    `requires_grad` marks optimizable leaves. `grad` is populated (or reset
    to zeros) by Graph.backward for every leaf that participated in the
    recorded computation.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_tracked", "_graph")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._tracked = requires_grad
        self._graph = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Run backward on the graph that recorded this tensor."""
        if self._graph is None:
            raise GraphError("tensor was not recorded by any graph")
        self._graph.backward(self)

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar. Scalars (Python numbers) are treated as constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not an op; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_ACTIVE: list["Graph"] = []


class Graph:
    """A tape of op records in construction order.

    Use as a context manager around the forward pass, then call backward on
    the scalar loss. A graph can run backward once; build a fresh graph for
    the next step.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Graph":
        if _ACTIVE:
            raise GraphError("another graph is already recording")
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE.pop()
        return False

    def _record(self, out: Tensor, inputs: tuple, backward_fn) -> None:
        out._tracked = True
        out._graph = self
        self.nodes.append(_Node(out, inputs, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into .grad for every participating leaf.

        Fan-out is handled additively. Leaves that took part in the recorded
        computation but do not influence the loss end up with zero grads.
        """
        if self._consumed:
            raise GraphError("backward was already run on this graph")
        if loss.data.shape != ():
            raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.get(id(node.out))
            if g is None:
                continue
            for t, piece in zip(node.inputs, node.backward_fn(g)):
                if piece is None:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + piece
                else:
                    grads[key] = piece

        for node in self.nodes:
            for t in node.inputs:
                if isinstance(t, Tensor) and t.requires_grad:
                    t.grad = grads.get(id(t), np.zeros_like(t.data))


def _graph() -> Graph | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unary(x, out_data, grad_fn):
    x = _coerce(x)
    out = Tensor(out_data)
    g = _graph()
    if g is not None and x._tracked:
        g._record(out, (x,), grad_fn)
    return out


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data @ b.data)
    g = _graph()
    if g is not None and (a._tracked or b._tracked):
        ad, bd = a.data, b.data

        def back(gout):
            return (gout @ bd.T if a._tracked else None,
                    ad.T @ gout if b._tracked else None)

        g._record(out, (a, b), back)
    return out


def add(a, b) -> Tensor:
    """Elementwise add. Supports equal shapes, a [B,F]+[F] bias row, or a scalar constant."""
    a = _coerce(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _unary(a, a.data + c, lambda gout: (gout,))
    if a.data.shape == b.data.shape:
        out = Tensor(a.data + b.data)
        bias = False
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        out = Tensor(a.data + b.data)
        bias = True
    else:
        raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")
    g = _graph()
    if g is not None and (a._tracked or b._tracked):

        def back(gout):
            ga = gout if a._tracked else None
            if not b._tracked:
                gb = None
            else:
                gb = gout.sum(axis=0) if bias else gout
            return (ga, gb)

        g._record(out, (a, b), back)
    return out


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _coerce(a)
        c = float(b)
        return _unary(a, a.data - c, lambda gout: (gout,))
    return add(a, neg(b))


def neg(a) -> Tensor:
    a = _coerce(a)
    return _unary(a, -a.data, lambda gout: (-gout,))


def mul(a, b) -> Tensor:
    """Elementwise multiply of equal shapes, or by a scalar constant."""
    a = _coerce(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _unary(a, a.data * c, lambda gout: (gout * c,))
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = Tensor(a.data * b.data)
    g = _graph()
    if g is not None and (a._tracked or b._tracked):
        ad, bd = a.data, b.data

        def back(gout):
            return (gout * bd if a._tracked else None,
                    gout * ad if b._tracked else None)

        g._record(out, (a, b), back)
    return out


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0.0
    return _unary(a, np.where(mask, a.data, 0.0), lambda gout: (gout * mask,))


def tanh(a) -> Tensor:
    a = _coerce(a)
    y = np.tanh(a.data)
    return _unary(a, y, lambda gout: (gout * (1.0 - y * y),))


def exp(a) -> Tensor:
    a = _coerce(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("exp: overflow to non-finite value")
    return _unary(a, y, lambda gout: (gout * y,))


def log(a) -> Tensor:
    a = _coerce(a)
    if np.any(a.data <= 0.0):
        raise FloatingPointError("log: non-positive input")
    return _unary(a, np.log(a.data), lambda gout: (gout / a.data,))


def square(a) -> Tensor:
    a = _coerce(a)
    return _unary(a, a.data * a.data, lambda gout: (gout * (2.0 * a.data),))


def sum_(a, axis: int | None = None) -> Tensor:
    """Sum over everything (axis=None) or over one axis of a 2-D tensor."""
    a = _coerce(a)
    if axis is None:
        shape = a.data.shape
        return _unary(a, a.data.sum(),
                      lambda gout: (np.broadcast_to(gout, shape).copy() if shape else gout,))
    if a.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"sum: axis {axis} invalid for shape {a.data.shape}")
    shape = a.data.shape

    def back(gout):
        if axis == 1:
            return (np.repeat(gout[:, None], shape[1], axis=1),)
        return (np.repeat(gout[None, :], shape[0], axis=0),)

    return _unary(a, a.data.sum(axis=axis), back)


def mean(a) -> Tensor:
    a = _coerce(a)
    n = a.data.size
    shape = a.data.shape
    return _unary(a, a.data.mean(),
                  lambda gout: (np.broadcast_to(gout / n, shape).copy() if shape else gout,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min of two equal-shape tensors. Ties send gradient to `a`."""
    a, b = _coerce(a), _coerce(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"minimum: incompatible shapes {a.data.shape} and {b.data.shape}")
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data))
    g = _graph()
    if g is not None and (a._tracked or b._tracked):

        def back(gout):
            return (gout * take_a if a._tracked else None,
                    gout * ~take_a if b._tracked else None)

        g._record(out, (a, b), back)
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]. Gradient passes where lo <= x <= hi (inclusive)."""
    a = _coerce(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _unary(a, np.clip(a.data, lo, hi), lambda gout: (gout * inside,))


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-D tensor."""
    a = _coerce(a)
    if a.data.ndim != 2 or not 0 <= start < stop <= a.data.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] invalid for shape {a.data.shape}")
    out = Tensor(a.data[:, start:stop].copy())
    g = _graph()
    if g is not None and a._tracked:
        shape = a.data.shape

        def back(gout):
            full = np.zeros(shape)
            full[:, start:stop] = gout
            return (full,)

        g._record(out, (a,), back)
    return out


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join two 2-D tensors along the feature axis."""
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"concat: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    g = _graph()
    if g is not None and (a._tracked or b._tracked):
        na = a.data.shape[1]

        def back(gout):
            return (gout[:, :na] if a._tracked else None,
                    gout[:, na:] if b._tracked else None)

        g._record(out, (a, b), back)
    return out


def gaussian_log_density(x, mu, log_var) -> Tensor:
    """Elementwise log N(x; mu, exp(log_var)).

    `log_var` may be a tensor of the same shape or a plain float (a fixed
    variance constant that receives no gradient).

    >>> float(gaussian_log_density(Tensor(0.0), Tensor(0.0), 0.0).data)
    -0.9189385332046727
    """
    x, mu = _coerce(x), _coerce(mu)
    if x.data.shape != mu.data.shape:
        raise ShapeError(f"gaussian_log_density: x {x.data.shape} vs mu {mu.data.shape}")
    lv_tensor = isinstance(log_var, Tensor)
    if lv_tensor and log_var.data.shape != x.data.shape:
        raise ShapeError(
            f"gaussian_log_density: log_var {log_var.data.shape} vs x {x.data.shape}")
    lv = log_var.data if lv_tensor else float(log_var)
    inv_var = np.exp(-lv)
    diff = x.data - mu.data
    out = Tensor(-0.5 * (LOG_2PI + lv + diff * diff * inv_var))
    g = _graph()
    inputs = (x, mu, log_var) if lv_tensor else (x, mu)
    if g is not None and any(t._tracked for t in inputs):

        def back(gout):
            gx = gout * (-diff * inv_var) if x._tracked else None
            gmu = gout * (diff * inv_var) if mu._tracked else None
            if not lv_tensor:
                return (gx, gmu)
            glv = gout * (-0.5 + 0.5 * diff * diff * inv_var) if log_var._tracked else None
            return (gx, gmu, glv)

        g._record(out, inputs, back)
    return out


def gaussian_sample(mu: Tensor, log_var: Tensor, noise: np.ndarray) -> Tensor:
    """Reparameterized draw mu + exp(log_var / 2) * noise with fixed external noise."""
    mu, log_var = _coerce(mu), _coerce(log_var)
    noise = np.asarray(noise, dtype=np.float64)
    if mu.data.shape != log_var.data.shape or mu.data.shape != noise.shape:
        raise ShapeError(
            f"gaussian_sample: mu {mu.data.shape}, log_var {log_var.data.shape}, "
            f"noise {noise.shape}")
    std = np.exp(0.5 * log_var.data)
    out = Tensor(mu.data + std * noise)
    g = _graph()
    if g is not None and (mu._tracked or log_var._tracked):

        def back(gout):
            gmu = gout if mu._tracked else None
            glv = gout * (0.5 * std * noise) if log_var._tracked else None
            return (gmu, glv)

        g._record(out, (mu, log_var), back)
    return out


def logmeanexp(values: list[Tensor]) -> Tensor:
    """log((1/L) * sum_l exp(v_l)) across a list of equal-shape tensors.

    Stabilized with the usual constant max shift, which leaves gradients
    untouched. With a single element this reduces to that element exactly.
    """
    if not values:
        raise ValueError("logmeanexp needs at least one tensor")
    if len(values) == 1:
        return values[0]
    shift = values[0].data
    for v in values[1:]:
        shift = np.maximum(shift, v.data)
    shift_t = Tensor(shift)
    acc = exp(sub(values[0], shift_t))
    for v in values[1:]:
        acc = add(acc, exp(sub(v, shift_t)))
    return add(add(log(acc), shift_t), -math.log(len(values)))
