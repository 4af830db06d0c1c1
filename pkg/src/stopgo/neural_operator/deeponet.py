"""DeepONet composition and the single-instance kernel network.

The operator output for head ``h`` is the p-term dot product

    G(u)(y)_h = sum_k branch(u)[h, k] * trunk(y)[h, k]

evaluated on normalized inputs and mapped back to physical units with the
stored output mean and standard deviation.
"""
from __future__ import annotations

import numpy as np

from .network import DenseNetwork

_RANGE_LIMIT = 4.0  # normalized inputs live in [-1, 1]; extrapolation is allowed up to here


def _affine(y, lo, hi):
    return 2.0 * (np.asarray(y, dtype=float) - lo) / (hi - lo) - 1.0


def _check_normalized(a, what):
    if np.any(np.abs(a) > _RANGE_LIMIT):
        raise ValueError(f"{what} input looks unnormalized (|value| up to {np.max(np.abs(a)):.3g})")


class DeepOperatorModel:
    """Branch/trunk operator network.

    ``norm`` holds ``lambda2_lo``, ``lambda2_hi``, ``trunk_lo``, ``trunk_hi``
    (per trunk input dimension), ``out_mean`` and ``out_std`` (per head).
    ``kind`` is ``"kernel"`` (trunk input ``(x, xi)``, heads ``Kw, Kv``) or
    ``"control"`` (trunk input ``t``, one head ``U``).
    """

    def __init__(self, branch, trunk, p, heads, norm, kind="kernel", meta=None):
        if branch.widths[-1] != heads * p or trunk.widths[-1] != heads * p:
            raise ValueError("branch and trunk must both output heads * p features")
        self.branch = branch
        self.trunk = trunk
        self.p = int(p)
        self.heads = int(heads)
        self.norm = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in norm.items()}
        self.kind = kind
        self.meta = dict(meta or {})

    @classmethod
    def create(cls, trunk_dim, p, heads, norm, rng, branch_hidden=(64, 64), trunk_hidden=(64, 64), kind="kernel"):
        branch = DenseNetwork([1, *branch_hidden, heads * p], rng)
        trunk = DenseNetwork([trunk_dim, *trunk_hidden, heads * p], rng)
        return cls(branch, trunk, p, heads, norm, kind)

    # ------------------------------------------------------------- parameters
    @property
    def params(self):
        return self.branch.params + self.trunk.params

    @property
    def n_params(self):
        return self.branch.n_params + self.trunk.n_params

    @property
    def lambda2_range(self):
        return float(self.norm["lambda2_lo"][0]), float(self.norm["lambda2_hi"][0])

    @property
    def t_max(self):
        return float(self.norm["trunk_hi"][0])

    # ------------------------------------------------------------- normalization
    def normalize_lambda2(self, lam):
        return _affine(np.atleast_1d(lam), self.norm["lambda2_lo"][0], self.norm["lambda2_hi"][0])

    def normalize_points(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        return _affine(y, self.norm["trunk_lo"], self.norm["trunk_hi"])

    def destandardize(self, out):
        return self.norm["out_mean"] + self.norm["out_std"] * out

    def standardize(self, values):
        return (values - self.norm["out_mean"]) / self.norm["out_std"]

    # ------------------------------------------------------------- evaluation
    def forward(self, u, y, cache=False):
        """Standardized outputs of shape ``(B, N, heads)`` for normalized ``u`` (B,) and ``y`` (N, d)."""
        u = np.asarray(u, dtype=float).reshape(-1, 1)
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        _check_normalized(u, "branch")
        _check_normalized(y, "trunk")
        b, bh = self.branch.forward(u, cache=True)
        t, th = self.trunk.forward(y, cache=True)
        B = b.reshape(len(u), self.heads, self.p)
        T = t.reshape(len(y), self.heads, self.p)
        out = np.einsum("bhk,nhk->bnh", B, T)
        if cache:
            return out, (bh, th, B, T)
        return out

    def backward(self, cache, grad_out):
        """Parameter gradients of ``sum(grad_out * output)``, ordered like ``params``."""
        bh, th, B, T = cache
        dB = np.einsum("bnh,nhk->bhk", grad_out, T).reshape(B.shape[0], -1)
        dT = np.einsum("bnh,bhk->nhk", grad_out, B).reshape(T.shape[0], -1)
        gb, _ = self.branch.backward(bh, dB)
        gt, _ = self.trunk.backward(th, dT)
        return gb + gt

    def predict(self, lam, y):
        """Physical outputs ``(B, N, heads)`` at physical ``lam`` and query points ``y``."""
        return self.destandardize(self.forward(self.normalize_lambda2(lam), self.normalize_points(y)))

    def predict_kernels(self, lam, nodes):
        out = self.predict(lam, nodes)[0]
        return out[:, 0], out[:, 1]

    def predict_edge(self, lam, xi, length):
        """Kernel traces ``Kw(L, xi)``, ``Kv(L, xi)``."""
        xi = np.asarray(xi, dtype=float)
        nodes = np.column_stack((np.full_like(xi, length), xi))
        return self.predict_kernels(lam, nodes)

    def predict_control(self, lam, t):
        return self.predict(lam, np.asarray(t, dtype=float)[:, None])[0, :, 0]

    # ------------------------------------------------------------- structure
    def expand_basis(self, new_p):
        """Copy with ``new_p`` basis functions; the added ones start at zero weight."""
        if new_p < self.p:
            raise ValueError("can only grow the basis")
        H, p, extra = self.heads, self.p, new_p - self.p

        def widen(net):
            params = [a.copy() for a in net.params]
            W, b = params[-2], params[-1]
            Wn = np.zeros((W.shape[0], H * new_p))
            bn = np.zeros(H * new_p)
            for h in range(H):
                Wn[:, h * new_p:h * new_p + p] = W[:, h * p:(h + 1) * p]
                bn[h * new_p:h * new_p + p] = b[h * p:(h + 1) * p]
            params[-2], params[-1] = Wn, bn
            return DenseNetwork(net.widths[:-1] + [H * new_p], activation=net.activation, params=params)

        # new trunk features are arbitrary; zero branch coefficients switch them off
        trunk = widen(self.trunk)
        rng = np.random.default_rng(0)
        for h in range(H):
            cols = slice(h * new_p + p, (h + 1) * new_p)
            trunk.params[-2][:, cols] = rng.normal(scale=0.1, size=(trunk.params[-2].shape[0], extra))
        return DeepOperatorModel(widen(self.branch), trunk, new_p, H, self.norm, self.kind, self.meta)


class KernelPINN:
    """Single-instance kernel surrogate ``(x, xi) -> (Kw, Kv)`` for one ``lambda2``."""

    kind = "pinn"

    def __init__(self, net, lambda2, norm, meta=None):
        self.net = net
        self.lambda2 = float(lambda2)
        self.norm = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in norm.items()}
        self.meta = dict(meta or {})

    @property
    def params(self):
        return self.net.params

    @property
    def n_params(self):
        return self.net.n_params

    def normalize_points(self, y):
        return _affine(y, self.norm["trunk_lo"], self.norm["trunk_hi"])

    def destandardize(self, out):
        return self.norm["out_mean"] + self.norm["out_std"] * out

    def standardize(self, values):
        return (values - self.norm["out_mean"]) / self.norm["out_std"]

    def forward(self, y, cache=False):
        y = np.asarray(y, dtype=float)
        _check_normalized(y, "network")
        return self.net.forward(y, cache=cache)

    def backward(self, hs, grad_out):
        grads, _ = self.net.backward(hs, grad_out)
        return grads

    def predict_kernels(self, nodes):
        out = self.destandardize(self.forward(self.normalize_points(nodes)))
        return out[:, 0], out[:, 1]

    def predict_edge(self, xi, length):
        xi = np.asarray(xi, dtype=float)
        return self.predict_kernels(np.column_stack((np.full_like(xi, length), xi)))
