"""Multilayer perceptrons and Adam, built on the tape in tensor.py."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, matmul, mul, relu, tanh

_ACTIVATIONS = {"relu": relu, "tanh": tanh, "identity": lambda t: t}


class Mlp:
    """A plain fully connected net: widths[0] in, widths[-1] out.

    Weights use the uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, drawn from
    the caller's rng so construction is reproducible. `dropout` is the drop
    probability applied after each hidden activation; masks are only applied
    when forward() receives a dropout_rng, so evaluation passes are always
    deterministic.
    """

    def __init__(self, widths: list[int], *, rng: np.random.Generator,
                 hidden_activation: str = "relu", output_activation: str = "identity",
                 dropout: float = 0.0, name: str = "mlp"):
        if len(widths) < 2:
            raise ValueError("an Mlp needs at least an input and an output width")
        if hidden_activation not in _ACTIVATIONS or output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation in ({hidden_activation}, {output_activation})")
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {dropout}")
        self.widths = list(widths)
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.dropout = dropout
        self.name = name
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (nin, nout) in enumerate(zip(widths[:-1], widths[1:])):
            bound = 1.0 / np.sqrt(nin)
            w = rng.uniform(-bound, bound, size=(nin, nout))
            b = rng.uniform(-bound, bound, size=(nout,))
            self.weights.append(Tensor(w, requires_grad=True, name=f"{name}.w{i}"))
            self.biases.append(Tensor(b, requires_grad=True, name=f"{name}.b{i}"))

    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def named_params(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.params()}

    def __call__(self, x, *, dropout_rng: np.random.Generator | None = None) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(x))
        act = _ACTIVATIONS[self.hidden_activation]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i < last:
                h = act(h)
                if dropout_rng is not None and self.dropout > 0.0:
                    keep = 1.0 - self.dropout
                    mask = (dropout_rng.random(h.data.shape) < keep) / keep
                    h = mul(h, Tensor(mask))
        return _ACTIVATIONS[self.output_activation](h)

    def copy(self) -> "Mlp":
        """Deep copy with identical parameter values (used for target networks)."""
        clone = Mlp.__new__(Mlp)
        clone.widths = list(self.widths)
        clone.hidden_activation = self.hidden_activation
        clone.output_activation = self.output_activation
        clone.dropout = self.dropout
        clone.name = self.name + ".target"
        clone.weights = [Tensor(w.data.copy(), requires_grad=True, name=w.name) for w in self.weights]
        clone.biases = [Tensor(b.data.copy(), requires_grad=True, name=b.name) for b in self.biases]
        return clone

    def load_from(self, other: "Mlp") -> None:
        for dst, src in zip(self.params(), other.params()):
            dst.data[...] = src.data


def polyak_update(target: Mlp, source: Mlp, tau: float) -> None:
    """In-place target <- tau * source + (1 - tau) * target, parameter by parameter."""
    for t, s in zip(target.params(), source.params()):
        t.data[...] = tau * s.data + (1.0 - tau) * t.data


class Adam:
    """Adam with bias correction, eps added outside the square root.

    The first step with gradient g moves each parameter by exactly
    lr * g_hat / (sqrt(v_hat) + eps) where g_hat = v_hat = bias-corrected
    moments; for a lone scalar with g = 1 that is lr / (1 + eps).
    """

    def __init__(self, params: list[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        """Apply one update using each parameter's current .grad."""
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {p.name or i} has no gradient; run backward first")
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.data[...] = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
