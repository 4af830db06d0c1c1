"""Fully connected networks with hand-written reverse mode, and Adam."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}


class DenseNetwork:
    """Multilayer perceptron; hidden layers use ``activation``, the last layer is linear.

    Parameters live in ``self.params`` as ``[W0, b0, W1, b1, ...]`` with
    ``W_k`` of shape ``(widths[k], widths[k+1])``.
    """

    def __init__(self, widths, rng=None, activation="tanh", params=None):
        self.widths = [int(w) for w in widths]
        if len(self.widths) < 2:
            raise ValueError("a network needs at least an input and an output width")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        if params is not None:
            self.params = [np.array(p, dtype=float) for p in params]
        else:
            rng = np.random.default_rng() if rng is None else rng
            self.params = []
            for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
                lim = np.sqrt(6.0 / (fan_in + fan_out))  # Glorot uniform
                self.params.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
                self.params.append(np.zeros(fan_out))

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def forward(self, x, cache=False):
        act, _ = _ACTIVATIONS[self.activation]
        h = np.asarray(x, dtype=float)
        hs = [h]
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            z = h @ W + b
            h = act(z) if k < n_layers - 1 else z
            hs.append(h)
        return (h, hs) if cache else h

    def backward(self, hs, grad_out):
        """Gradients of ``sum(grad_out * output)`` w.r.t. parameters and input."""
        _, dact = _ACTIVATIONS[self.activation]
        n_layers = len(self.params) // 2
        grads = [None] * len(self.params)
        g = grad_out
        for k in reversed(range(n_layers)):
            W = self.params[2 * k]
            h_in = hs[k]
            grads[2 * k] = h_in.T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ W.T
            if k > 0:
                g = g * dact(None, hs[k])
        return grads, g

    def copy(self):
        return DenseNetwork(self.widths, activation=self.activation, params=self.params)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params, **kw):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_update(params, grads, state, lr):
    """One in-place Adam step."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
