"""Backstepping gain kernels on the triangle ``0 <= xi <= x <= L``.

The kernel pair solves

    lambda2 Kw_x - lambda1 Kw_xi = c(x) Kv
    Kv_x + Kv_xi = 0
    Kw(x, x) = -c(x) / (lambda1 + lambda2)
    Kv(x, 0) = -Kw(x, 0)

with ``c(x) = -exp(-x / (tau v*)) / tau``.  ``Kv`` is constant along
``x - xi = const`` so ``Kv(x, xi) = -g(x - xi)`` with ``g(s) = Kw(s, 0)``.
Following the ``Kw`` characteristics (direction ``(lambda2, -lambda1)``) back
to the diagonal and changing variables to ``s = x' - xi'`` gives

    Kw(x, xi) = -c(x0)/Lam - 1/Lam * int_0^{x-xi} c(x - lambda2 (x - xi - s)/Lam) g(s) ds

where ``Lam = lambda1 + lambda2`` and ``x0 = x - lambda2 (x - xi) / Lam`` is
the foot of the characteristic.  Setting ``xi = 0`` turns this into a linear
Volterra equation for ``g`` which is marched in increasing ``x`` with the
trapezoidal rule; every other node then follows from the same quadrature.  On
a uniform grid the abscissae ``s`` coincide with grid nodes, so no
interpolation is needed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError


@dataclass(frozen=True)
class TriangularGrid:
    n: int
    length: float

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("triangular grid needs at least 3 points per edge")

    @property
    def h(self):
        return self.length / (self.n - 1)

    @property
    def axis(self):
        return np.linspace(0.0, self.length, self.n)

    def nodes(self):
        """``(x, xi)`` coordinates of all nodes with ``xi <= x``, row-major in x."""
        i, j = np.tril_indices(self.n)
        a = self.axis
        return np.column_stack((a[i], a[j]))


@dataclass
class KernelField:
    """Kernels on a ``TriangularGrid``; entries above the diagonal are NaN."""

    kw: np.ndarray
    kv: np.ndarray
    lambda1: float
    lambda2: float
    tau: float
    v_star: float
    grid: TriangularGrid

    @property
    def length(self):
        return self.grid.length

    def c(self, x):
        return kernel_coefficient(x, self.tau, self.v_star)

    def edge(self):
        """Kernel traces ``(Kw(L, xi), Kv(L, xi))`` on the grid axis."""
        return self.kw[-1].copy(), self.kv[-1].copy()

    def values(self):
        """Flattened ``(kw, kv)`` over ``grid.nodes()``."""
        i, j = np.tril_indices(self.grid.n)
        return self.kw[i, j], self.kv[i, j]

    def to_csv(self, path):
        nodes = self.grid.nodes()
        kw, kv = self.values()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "xi", "kw", "kv"])
            for (x, xi), a, b in zip(nodes, kw, kv):
                w.writerow([repr(float(x)), repr(float(xi)), repr(float(a)), repr(float(b))])

    @classmethod
    def from_csv(cls, path, lambda1, lambda2, tau, v_star):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        m = len(data)
        n = int(round((np.sqrt(8 * m + 1) - 1) / 2))
        if n * (n + 1) // 2 != m:
            raise GridMismatchError(f"{m} rows do not form a triangular grid")
        grid = TriangularGrid(n, float(data[:, 0].max()))
        kw = np.full((n, n), np.nan)
        kv = np.full((n, n), np.nan)
        i, j = np.tril_indices(n)
        kw[i, j] = data[:, 2]
        kv[i, j] = data[:, 3]
        return cls(kw, kv, lambda1, lambda2, tau, v_star, grid)


def kernel_coefficient(x, tau, v_star):
    """In-domain coupling ``c(x) = -exp(-x / (tau v*)) / tau``."""
    return -np.exp(-np.asarray(x, dtype=float) / (tau * v_star)) / tau


def solve_kernels(eq, tau, length, grid=None):
    """Solve the kernel equations for equilibrium ``eq`` on ``grid`` (default n=101)."""
    if grid is None:
        grid = TriangularGrid(101, length)
    elif not np.isclose(grid.length, length):
        raise GridMismatchError("grid length differs from road length")
    l1, l2 = eq.lambda1, eq.lambda2
    if not (l1 > 0 and l2 > 0):
        raise ValueError("kernel equations need lambda1 > 0 and lambda2 > 0")
    lam = l1 + l2
    n, h = grid.n, grid.h
    s = grid.axis
    vs = eq.v_star

    def c(x):
        return kernel_coefficient(x, tau, vs)

    # Volterra march for g(x) = Kw(x, 0)
    g = np.empty(n)
    g[0] = -c(0.0) / lam
    for i in range(1, n):
        x = s[i]
        ck = c((l1 * x + l2 * s[: i + 1]) / lam)
        acc = 0.5 * ck[0] * g[0] + np.dot(ck[1:i], g[1:i])
        g[i] = (-c(l1 * x / lam) / lam - h / lam * acc) / (1.0 + 0.5 * h * ck[i] / lam)

    kw = np.full((n, n), np.nan)
    kv = np.full((n, n), np.nan)
    for d in range(n):
        rows = np.arange(d, n)
        x = s[rows]
        diag = -c(x - l2 * d * h / lam) / lam
        if d == 0:
            vals = diag
        else:
            wts = np.full(d + 1, h)
            wts[0] = wts[-1] = 0.5 * h
            arg = x[:, None] - l2 * (d * h - s[None, : d + 1]) / lam
            vals = diag - (c(arg) * (wts * g[: d + 1])[None, :]).sum(axis=1) / lam
        kw[rows, rows - d] = vals
        kv[rows, rows - d] = -g[d]
    kw[:, 0] = g  # identical up to rounding; pins Kv(x,0) = -Kw(x,0) bitwise
    return KernelField(kw, kv, l1, l2, tau, vs, grid)


@dataclass
class KernelResiduals:
    kappa1: np.ndarray  # interior, NaN where the stencil leaves the triangle
    kappa2: np.ndarray
    kappa3: np.ndarray  # diagonal, length n
    kappa4: np.ndarray  # xi = 0 edge, length n

    def summary(self):
        out = {}
        for name in ("kappa1", "kappa2", "kappa3", "kappa4"):
            a = np.abs(getattr(self, name))
            a = a[np.isfinite(a)]
            out[name] = {"max": float(a.max()) if a.size else 0.0, "mean": float(a.mean()) if a.size else 0.0}
        return out


def kernel_residuals(kf, kv_sign=+1.0):
    """Kernel-equation residuals of ``kf`` by central differences.

    ``kv_sign`` selects the transport-equation convention ``Kv_x + sign * Kv_xi``.
    """
    n, h = kf.grid.n, kf.grid.h
    if n < 3:
        raise ValueError("need n >= 3")
    s = kf.grid.axis
    kw, kv = kf.kw, kf.kv
    k1 = np.full((n, n), np.nan)
    k2 = np.full((n, n), np.nan)
    i, j = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
    m = j <= i - 1
    i, j = i[m], j[m]
    kw_x = (kw[i + 1, j] - kw[i - 1, j]) / (2 * h)
    kw_xi = (kw[i, j + 1] - kw[i, j - 1]) / (2 * h)
    kv_x = (kv[i + 1, j] - kv[i - 1, j]) / (2 * h)
    kv_xi = (kv[i, j + 1] - kv[i, j - 1]) / (2 * h)
    k1[i, j] = kf.lambda2 * kw_x - kf.lambda1 * kw_xi - kf.c(s[i]) * kv[i, j]
    k2[i, j] = kf.lambda2 * (kv_x + kv_sign * kv_xi)
    d = np.arange(n)
    k3 = kw[d, d] + kf.c(s) / (kf.lambda1 + kf.lambda2)
    k4 = kv[:, 0] + kw[:, 0]
    return KernelResiduals(k1, k2, k3, k4)


@dataclass
class OriginalGains:
    """Weights of the feedback law written in ``(rho, v)`` coordinates.

    ``U = coef_q * (q(L) - q*) + coef_v * (v(L) - v*)
          + int gain_q(xi) (q - q*) dxi + int gain_v(xi) (v - v*) dxi``.
    The result is a flow [veh/s]; divide by ``rho*`` for the speed actuation.
    """

    xi: np.ndarray
    gain_q: np.ndarray
    gain_v: np.ndarray
    coef_q: float
    coef_v: float
    kappa: float
    r: float


def control_gains_original(kw_edge, kv_edge, xi, eq, tau, length):
    """Precompute the original-coordinate gain profiles from kernel traces at x = L."""
    vs, rs, dv = eq.v_star, eq.rho_star, eq.dv_star
    ex = np.exp(np.asarray(xi) / (tau * vs))
    beta = rs + vs / dv
    gain_q = ex * kw_edge
    gain_v = -(vs / dv * kv_edge + beta * ex * kw_edge)
    return OriginalGains(
        xi=np.asarray(xi, dtype=float),
        gain_q=gain_q,
        gain_v=gain_v,
        coef_q=-1.0,
        coef_v=beta,
        kappa=float(np.exp(-length / (tau * vs))),
        r=float(eq.lambda2 / eq.lambda1),
    )
