"""Density-speed-flow relations and congested equilibria.

All quantities are SI: density in veh/m, speed in m/s, flow in veh/s.
Two diagrams are provided, both exposing ``velocity``, ``velocity_derivative``,
``flow`` and ``flow_derivative`` so the rest of the package can treat them
interchangeably.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DomainError, ModelError, RegimeError


def _check_density(rho, rho_m, *, open_interval=False):
    r = np.asarray(rho, dtype=float)
    if open_interval:
        bad = (r <= 0.0) | (r >= rho_m)
    else:
        bad = (r < 0.0) | (r > rho_m)
    if np.any(bad) or not np.all(np.isfinite(r)):
        lo, hi = ("(", ")") if open_interval else ("[", "]")
        raise DomainError(f"density outside {lo}0, {rho_m:g}{hi} veh/m: {np.min(r):g}..{np.max(r):g}")
    return r


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class GreenshieldsFD:
    """Generalised Greenshields diagram ``V(rho) = v_f (1 - (rho/rho_m)**gamma)``."""

    v_f: float
    rho_m: float
    gamma: float = 1.0

    def __post_init__(self):
        if not (self.v_f > 0 and self.rho_m > 0 and self.gamma > 0):
            raise ModelError(f"Greenshields parameters must be positive: {self}")

    def velocity(self, rho):
        r = _check_density(rho, self.rho_m)
        return _out(self.v_f * (1.0 - (r / self.rho_m) ** self.gamma))

    def velocity_derivative(self, rho):
        r = _check_density(rho, self.rho_m, open_interval=True)
        g = self.gamma
        return _out(-g * self.v_f * r ** (g - 1.0) / self.rho_m**g)

    def speed_and_slope(self, rho):
        """Unchecked ``(V, V')`` for hot loops; ``rho`` must be a float array in (0, rho_m)."""
        g = self.gamma
        if g == 1.0:
            return self.v_f * (1.0 - rho / self.rho_m), np.full_like(rho, -self.v_f / self.rho_m)
        s = (rho / self.rho_m) ** g
        return self.v_f * (1.0 - s), -g * self.v_f * s / rho

    def flow(self, rho):
        r = _check_density(rho, self.rho_m)
        return _out(r * self.v_f * (1.0 - (r / self.rho_m) ** self.gamma))

    def flow_derivative(self, rho):
        r = _check_density(rho, self.rho_m)
        g = self.gamma
        return _out(self.v_f * (1.0 - (g + 1.0) * (r / self.rho_m) ** g))


@dataclass(frozen=True)
class ThreeParamFD:
    """Smooth three-parameter flow-density diagram.

    ``Q(rho) = zeta * (a + (b - a) r - sqrt(1 + kappa**2 (r - p)**2))`` with
    ``r = rho / rho_m``, ``a = sqrt(1 + kappa**2 p**2)`` and
    ``b = sqrt(1 + kappa**2 (1 - p)**2)``.  ``zeta`` is in veh/s.

    ``Q(0)`` vanishes analytically; whatever rounding leaves behind is stored in
    ``q0_offset`` and subtracted so that zero density carries zero flow exactly.
    """

    zeta: float
    kappa_fd: float
    p_fd: float
    rho_m: float
    q0_offset: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.zeta > 0 and self.kappa_fd > 0 and 0 < self.p_fd < 1 and self.rho_m > 0):
            raise ModelError(f"invalid three-parameter diagram: {self}")
        object.__setattr__(self, "q0_offset", self._raw_flow(0.0))

    # a and b are derived on every access so they can never go stale
    @property
    def a(self):
        return math.sqrt(1.0 + self.kappa_fd**2 * self.p_fd**2)

    @property
    def b(self):
        return math.sqrt(1.0 + self.kappa_fd**2 * (1.0 - self.p_fd) ** 2)

    def _raw_flow(self, rho):
        r = np.asarray(rho, dtype=float) / self.rho_m
        k2 = self.kappa_fd**2
        return self.zeta * (self.a + (self.b - self.a) * r - np.sqrt(1.0 + k2 * (r - self.p_fd) ** 2))

    def flow(self, rho):
        r = _check_density(rho, self.rho_m)
        return _out(self._raw_flow(r) - self.q0_offset)

    def flow_derivative(self, rho):
        r = _check_density(rho, self.rho_m) / self.rho_m
        k2 = self.kappa_fd**2
        s = np.sqrt(1.0 + k2 * (r - self.p_fd) ** 2)
        return _out(self.zeta / self.rho_m * ((self.b - self.a) - k2 * (r - self.p_fd) / s))

    def flow_second_derivative(self, rho):
        r = _check_density(rho, self.rho_m) / self.rho_m
        k2 = self.kappa_fd**2
        s = np.sqrt(1.0 + k2 * (r - self.p_fd) ** 2)
        return _out(-self.zeta * k2 / (self.rho_m**2 * s**3))

    def velocity(self, rho):
        r = _check_density(rho, self.rho_m)
        q = self._raw_flow(r) - self.q0_offset
        small = r < 1e-9 * self.rho_m
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(small, 0.0, q / np.where(small, 1.0, r))
        # rho -> 0 limit: V(0) = Q'(0)
        v = np.where(small, self.flow_derivative(np.zeros_like(r)) + 0.5 * r * self.flow_second_derivative(np.zeros_like(r)), v)
        return _out(v)

    def velocity_derivative(self, rho):
        r = _check_density(rho, self.rho_m, open_interval=True)
        q = self._raw_flow(r) - self.q0_offset
        dq = np.asarray(self.flow_derivative(r))
        return _out((r * dq - q) / r**2)

    def speed_and_slope(self, rho):
        """Unchecked ``(V, V')`` for hot loops; ``rho`` must be a float array in (0, rho_m)."""
        r = rho / self.rho_m
        k2 = self.kappa_fd**2
        s = np.sqrt(1.0 + k2 * (r - self.p_fd) ** 2)
        q = self.zeta * (self.a + (self.b - self.a) * r - s) - self.q0_offset
        dq = self.zeta / self.rho_m * ((self.b - self.a) - k2 * (r - self.p_fd) / s)
        return q / rho, (rho * dq - q) / rho**2


FundamentalDiagram = GreenshieldsFD | ThreeParamFD


@dataclass(frozen=True)
class Equilibrium:
    """Uniform congested equilibrium and its characteristic speeds (SI)."""

    rho_star: float
    v_star: float
    q_star: float
    lambda1: float
    lambda2: float
    dv_star: float  # V'(rho_star)


def critical_density(fd, rtol=1e-10):
    """Density at which the flow ``Q`` peaks, found by bisection on ``Q'``."""
    lo, hi = 1e-12 * fd.rho_m, fd.rho_m * (1.0 - 1e-12)
    f_lo, f_hi = fd.flow_derivative(lo), fd.flow_derivative(hi)
    if not (f_lo > 0 > f_hi):
        raise ModelError("flow derivative has no sign change on (0, rho_m); diagram is not concave")
    return optimize.bisect(fd.flow_derivative, lo, hi, xtol=rtol * fd.rho_m * 1e-3, rtol=rtol, maxiter=500)


def equilibrium_from_density(fd, rho_star):
    """Congested equilibrium at ``rho_star``.

    Raises ``RegimeError`` unless ``rho_star`` is strictly above the critical
    density, where the second characteristic speed is positive.
    """
    rho_c = critical_density(fd)
    if not rho_star > rho_c * (1.0 + 1e-9):
        raise RegimeError(f"rho_star = {rho_star:g} veh/m is not congested (rho_c = {rho_c:g})")
    v_star = fd.velocity(rho_star)
    dv = fd.velocity_derivative(rho_star)
    lam2 = -rho_star * dv - v_star
    if lam2 <= 0.0:
        raise RegimeError(f"lambda2 = {lam2:g} m/s is not positive")
    return Equilibrium(
        rho_star=float(rho_star),
        v_star=float(v_star),
        q_star=float(rho_star * v_star),
        lambda1=float(v_star),
        lambda2=float(lam2),
        dv_star=float(dv),
    )


def equilibrium_from_demand(fd, q_star):
    """Congested equilibrium carrying inflow ``q_star`` (the congested root of Q = q*)."""
    rho_c = critical_density(fd)
    if q_star >= fd.flow(rho_c):
        raise RegimeError(f"demand {q_star:g} veh/s exceeds capacity {fd.flow(rho_c):g}")
    rho = optimize.brentq(lambda r: fd.flow(r) - q_star, rho_c, fd.rho_m, xtol=1e-14, rtol=1e-14)
    return equilibrium_from_density(fd, rho)


def finite_time(eq, length):
    """Convergence time ``L/lambda1 + L/lambda2`` of the exact closed loop."""
    return length / eq.lambda1 + length / eq.lambda2
