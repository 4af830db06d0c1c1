"""Boundary controllers sharing one ``compute(t, state, eq) -> U`` interface.

``U`` is the speed actuation [m/s] added at the outlet,
``v(L, t) = q(L, t) / rho* + U(t)``.  The kernel-based feedback laws produce a
flow, which is divided by ``rho*`` so that the actuated outlet reproduces the
zero-outlet target system.
"""
from __future__ import annotations

import warnings as _warnings

import numpy as np

from .errors import InstanceMismatchError
from .kernels import control_gains_original, solve_kernels


class Controller:
    name = "controller"

    def __init__(self):
        self.warnings = []

    def reset(self):
        pass

    def compute(self, t, state, eq):
        raise NotImplementedError

    def _warn(self, msg):
        if msg not in self.warnings:
            self.warnings.append(msg)
            _warnings.warn(msg, RuntimeWarning, stacklevel=3)


class OpenLoop(Controller):
    name = "open_loop"

    def compute(self, t, state, eq):
        return 0.0


def _quadrature(length, n_cells):
    """Nodes and trapezoid weights over [0, L] using the cell centres plus both ends."""
    dx = length / n_cells
    pts = np.concatenate(([0.0], (np.arange(n_cells) + 0.5) * dx, [length]))
    w = np.empty_like(pts)
    gaps = np.diff(pts)
    w[0] = 0.5 * gaps[0]
    w[-1] = 0.5 * gaps[-1]
    w[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    return pts, w


def _extend(a):
    # boundary traces taken from the adjacent cells
    return np.concatenate(([a[0]], a, [a[-1]]))


class KernelFeedback(Controller):
    """Backstepping law built from the kernel traces ``Kw(L, .)``, ``Kv(L, .)``.

    ``kw_edge``/``kv_edge`` are sampled at ``xi``; they are resampled linearly
    onto the quadrature nodes of whatever grid the state lives on.
    ``form`` selects the assembly: ``"original"`` (density/speed coordinates)
    or ``"transformed"`` (Riemann-type variables); both are the same law.
    """

    name = "backstepping"

    def __init__(self, kw_edge, kv_edge, xi, eq, tau, length, form="original", u_max=None):
        super().__init__()
        self.kw_edge = np.asarray(kw_edge, dtype=float)
        self.kv_edge = np.asarray(kv_edge, dtype=float)
        self.xi = np.asarray(xi, dtype=float)
        self.eq = eq
        self.tau = tau
        self.length = length
        self.form = form
        self.u_max = u_max
        self.gains = control_gains_original(self.kw_edge, self.kv_edge, self.xi, eq, tau, length)
        self._cache = {}

    def _setup(self, n_cells):
        if n_cells not in self._cache:
            pts, w = _quadrature(self.length, n_cells)
            # resample the smooth kernels, then apply the exponential weights exactly
            kw = np.interp(pts, self.xi, self.kw_edge)
            kv = np.interp(pts, self.xi, self.kv_edge)
            g = control_gains_original(kw, kv, pts, self.eq, self.tau, self.length)
            self._cache[n_cells] = dict(
                pts=pts,
                w=w,
                wq=w * g.gain_q,
                wv=w * g.gain_v,
                wkw=w * kw,
                wkv=w * kv,
                ex=np.exp(pts / (self.tau * self.eq.v_star)),
            )
        return self._cache[n_cells]

    def flow_control(self, state):
        """Feedback value in flow units [veh/s]."""
        eq = self.eq
        c = self._setup(len(state.rho))
        rho = _extend(state.rho)
        v = _extend(state.v)
        qbar = rho * v - eq.q_star
        vbar = v - eq.v_star
        if self.form == "original":
            g = self.gains
            return float(g.coef_q * qbar[-1] + g.coef_v * vbar[-1] + c["wq"] @ qbar + c["wv"] @ vbar)
        beta = eq.rho_star + eq.v_star / eq.dv_star
        wt = c["ex"] * (qbar - beta * vbar)
        vt = -(eq.v_star / eq.dv_star) * vbar
        return float(-self.gains.kappa * wt[-1] + c["wkw"] @ wt + c["wkv"] @ vt)

    def compute(self, t, state, eq):
        u = self.flow_control(state) / self.eq.rho_star
        if self.u_max is not None:
            u = float(np.clip(u, -self.u_max, self.u_max))
        return u


class BacksteppingController(KernelFeedback):
    name = "backstepping"

    @classmethod
    def from_equilibrium(cls, eq, tau, length, grid=None, **kw):
        kf = solve_kernels(eq, tau, length, grid)
        kw_edge, kv_edge = kf.edge()
        obj = cls(kw_edge, kv_edge, kf.grid.axis, eq, tau, length, **kw)
        obj.kernels = kf
        return obj


class NOKernelController(KernelFeedback):
    """Backstepping feedback whose kernels come from a trained kernel operator."""

    name = "no_kernel"

    def __init__(self, model, eq, tau, length, n_xi=101, **kw):
        xi = np.linspace(0.0, length, n_xi)
        lo, hi = model.lambda2_range
        kw_edge, kv_edge = model.predict_edge(eq.lambda2, xi, length)
        super().__init__(kw_edge, kv_edge, xi, eq, tau, length, **kw)
        self.model = model
        if not lo <= eq.lambda2 <= hi:
            self._warn(f"lambda2 = {eq.lambda2:.4g} m/s outside training interval [{lo:.4g}, {hi:.4g}]")


class PINOKernelController(NOKernelController):
    name = "pino_kernel"


class PINNKernelController(KernelFeedback):
    """Feedback with kernels from a single-instance physics-informed network."""

    name = "pinn_kernel"

    def __init__(self, pinn, eq, tau, length, n_xi=101, **kw):
        if not np.isclose(pinn.lambda2, eq.lambda2, rtol=1e-9, atol=0.0):
            raise InstanceMismatchError(
                f"PINN trained at lambda2 = {pinn.lambda2:.6g} m/s, scenario has {eq.lambda2:.6g}")
        xi = np.linspace(0.0, length, n_xi)
        kw_edge, kv_edge = pinn.predict_edge(xi, length)
        super().__init__(kw_edge, kv_edge, xi, eq, tau, length, **kw)
        self.model = pinn


class NOControlLaw(Controller):
    """Open-loop replay of the learned map ``(lambda2, t) -> U``."""

    name = "no_control_law"

    def __init__(self, model, lambda2):
        super().__init__()
        self.model = model
        self.lambda2 = lambda2
        lo, hi = model.lambda2_range
        if not lo <= lambda2 <= hi:
            self._warn(f"lambda2 = {lambda2:.4g} m/s outside training interval [{lo:.4g}, {hi:.4g}]")

    def compute(self, t, state, eq):
        t_max = self.model.t_max
        if t > t_max:
            self._warn(f"t beyond training horizon {t_max:g} s; clamped")
            t = t_max
        return float(self.model.predict_control(self.lambda2, np.array([t]))[0])


class PIController(Controller):
    """PI law on the inlet speed error, realised as an absolute outlet speed.

    ``U_PI = v* + kp (v(0,t) - v*) + ki int (v(0,s) - v*) ds`` is imposed as
    ``v(L, t) = U_PI``; ``compute`` returns the equivalent actuation
    ``U_PI - q(L, t) / rho*``.  The integral uses the rectangle rule over the
    simulator's steps and is clamped so that ``|ki * integral| <= u_max``.
    """

    name = "pi"

    def __init__(self, kp=-0.4, ki=-0.01, u_max=5.0):
        super().__init__()
        self.kp = kp
        self.ki = ki
        self.u_max = u_max
        self.reset()

    def reset(self):
        self.integral = 0.0
        self._t_prev = None
        self._e_prev = 0.0

    def deviation(self, t, state, eq):
        e = state.v[0] - eq.v_star
        if self._t_prev is not None and t > self._t_prev:
            self.integral += self._e_prev * (t - self._t_prev)
            if self.ki != 0.0 and self.u_max is not None:
                lim = self.u_max / abs(self.ki)
                self.integral = float(np.clip(self.integral, -lim, lim))
        self._t_prev = t
        self._e_prev = e
        return self.kp * e + self.ki * self.integral

    def compute(self, t, state, eq):
        dev = self.deviation(t, state, eq)
        q_out = state.rho[-1] * state.v[-1]
        return eq.v_star + dev - q_out / eq.rho_star
