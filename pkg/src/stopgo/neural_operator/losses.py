"""Training losses with their gradients with respect to the network outputs.

All losses act on standardized outputs ``O = (K - mean) / std``.  The
kernel-equation residuals are nondimensionalised by one kernel scale
``s = max(std)`` shared by both heads: transport residuals are multiplied by
``L / ((lambda1 + lambda2) s)``, boundary residuals divided by ``s``.  A
per-head scale would inflate the ``Kv + Kw`` boundary residual by the ratio
of the two standard deviations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kernels import kernel_coefficient

W, V = 0, 1  # head indices


def data_loss(out, target):
    """Mean squared error and its gradient."""
    r = out - target
    return float(np.mean(r * r)), 2.0 * r / r.size


@dataclass
class CollocationSet:
    """Physical query points for one physics-loss evaluation.

    Rows are laid out as ``[interior, x+h, x-h, xi+h, xi-h, diagonal, edge]``;
    the residual derivatives use the four shifted copies of the interior set.
    """

    points: np.ndarray
    n_interior: int
    n_diag: int
    n_edge: int
    h: float

    @classmethod
    def build(cls, interior, axis, h):
        interior = np.asarray(interior, dtype=float)
        ex = np.array([h, 0.0])
        ey = np.array([0.0, h])
        diag = np.column_stack((axis, axis))
        edge = np.column_stack((axis, np.zeros_like(axis)))
        pts = np.vstack((interior, interior + ex, interior - ex, interior + ey, interior - ey, diag, edge))
        return cls(pts, len(interior), len(axis), len(axis), float(h))

    def split(self, out):
        """Views ``(base, xp, xm, yp, ym, diag, edge)`` along axis -2 of ``out``."""
        n = self.n_interior
        cuts = np.cumsum([n, n, n, n, n, self.n_diag])
        return np.split(out, cuts, axis=-2)

    @property
    def interior(self):
        return self.points[: self.n_interior]

    @property
    def diag_x(self):
        a = 5 * self.n_interior
        return self.points[a:a + self.n_diag, 0]


def physics_loss(out, colloc, lambda1, lambda2, tau, v_star, mean, std, length, kv_sign=1.0):
    """Kernel-equation loss on standardized outputs ``out`` of shape (B, rows, 2).

    ``lambda1``, ``lambda2``, ``v_star`` are per-sample arrays of length B.
    Returns ``(loss, grad, parts)`` where ``parts`` holds the four mean
    squared residual terms.
    """
    out = np.asarray(out, dtype=float)
    B = out.shape[0]
    l1 = np.asarray(lambda1, dtype=float).reshape(B, 1)
    l2 = np.asarray(lambda2, dtype=float).reshape(B, 1)
    vs = np.asarray(v_star, dtype=float).reshape(B, 1)
    lam = l1 + l2
    mw, mv = float(mean[W]), float(mean[V])
    sw, sv = float(std[W]), float(std[V])
    sc = max(sw, sv)
    h = colloc.h
    base, xp, xm, yp, ym, dg, ed = colloc.split(out)

    x_int = colloc.interior[:, 0][None, :]
    c_int = kernel_coefficient(x_int, tau, vs)
    a = length / (lam * sc)
    dx_w = (xp[..., W] - xm[..., W]) / (2 * h)
    dy_w = (yp[..., W] - ym[..., W]) / (2 * h)
    dx_v = (xp[..., V] - xm[..., V]) / (2 * h)
    dy_v = (yp[..., V] - ym[..., V]) / (2 * h)
    kv0 = mv + sv * base[..., V]
    r1 = a * (sw * (l2 * dx_w - l1 * dy_w) - c_int * kv0)
    r2 = a * l2 * sv * (dx_v + kv_sign * dy_v)

    c_diag = kernel_coefficient(colloc.diag_x[None, :], tau, vs)
    r3 = (mw + sw * dg[..., W] + c_diag / lam) / sc
    r4 = (mv + sv * ed[..., V] + mw + sw * ed[..., W]) / sc

    parts = {k: float(np.mean(r * r)) for k, r in (("kappa1", r1), ("kappa2", r2), ("kappa3", r3), ("kappa4", r4))}
    loss = sum(parts.values())

    g = np.zeros_like(out)
    gb, gxp, gxm, gyp, gym, gdg, ged = colloc.split(g)
    d1 = 2.0 * r1 / r1.size
    d2 = 2.0 * r2 / r2.size
    d3 = 2.0 * r3 / r3.size
    d4 = 2.0 * r4 / r4.size
    t = d1 * a * sw * l2 / (2 * h)
    gxp[..., W] += t
    gxm[..., W] -= t
    t = d1 * a * sw * l1 / (2 * h)
    gyp[..., W] -= t
    gym[..., W] += t
    gb[..., V] += -d1 * a * c_int * sv
    t = d2 * a * l2 * sv / (2 * h)
    gxp[..., V] += t
    gxm[..., V] -= t
    gyp[..., V] += kv_sign * t
    gym[..., V] -= kv_sign * t
    gdg[..., W] += d3 * sw / sc
    ged[..., V] += d4 * sv / sc
    ged[..., W] += d4 * sw / sc
    return loss, g, parts
