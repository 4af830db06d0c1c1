"""Finite-volume integration of the ARZ traffic model on a road segment.

The solver advances the conservative pair ``(rho, y)`` with
``y = rho * (v - V(rho))``.  The homogeneous part uses a first-order HLL flux
built from the two characteristic speeds ``v`` and ``v + rho V'(rho)``; the
relaxation source ``-y / tau`` is linear in ``y`` and is integrated exactly.

Boundary data enter through one ghost cell at each end:

* inlet: the ghost carries the constant demand ``q*`` with its speed copied
  from the first cell, so ``rho(0, t) v(0, t) = q*``;
* outlet: the ghost speed is ``q(L, t) / rho* + U(t)`` with ``q(L, t)``
  extrapolated from the last cell, and the ghost keeps the last cell's density.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, ConstructionError
from .fundamental_diagram import Equilibrium
from .units import KMH, PER_KM


@dataclass(frozen=True)
class Grid1D:
    length: float
    n_cells: int

    def __post_init__(self):
        if self.n_cells < 8:
            raise ValueError("a grid needs at least 8 cells")
        if not self.length > 0:
            raise ValueError("road length must be positive")

    @property
    def dx(self):
        return self.length / self.n_cells

    @property
    def centers(self):
        return (np.arange(self.n_cells) + 0.5) * self.dx


@dataclass
class TrafficState:
    rho: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def copy(self):
        return TrafficState(self.rho.copy(), self.v.copy(), self.t)


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    tau: float
    fd: object
    eq: Equilibrium
    grid: Grid1D
    cfl: float = 0.5
    n_out_x: int = 101
    n_out_t: int = 301

    def __post_init__(self):
        if not 0 < self.cfl <= 0.9:
            raise ValueError("cfl number must lie in (0, 0.9]")
        if not self.tau > 0:
            raise ValueError("relaxation time must be positive")

    @property
    def out_x(self):
        return np.linspace(0.0, self.grid.length, self.n_out_x)

    @property
    def out_t(self):
        return np.linspace(0.0, self.horizon, self.n_out_t)


# ---------------------------------------------------------------- initial data

@dataclass(frozen=True)
class InitialCondition:
    """A named family of initial profiles.

    ``kind`` is one of ``sinusoidal_3pi``, ``sinusoidal_pi``, ``linear``,
    ``constant_equilibrium`` or ``custom``.  ``amplitude`` scales the
    sinusoidal and linear families.  ``linear`` builds ``q(x,0)`` and
    ``v(x,0)`` from the affine coefficients in ``params`` (SI units:
    ``q_slope`` veh/s/m, ``q_intercept`` veh/s, ``v_slope`` 1/s,
    ``v_intercept`` m/s); when none are given it uses a linear ramp of relative
    size ``amplitude`` around the equilibrium, slower and denser downstream.
    ``custom`` takes callables ``rho(x)`` and ``v(x)`` in ``params``.
    """

    kind: str = "sinusoidal_3pi"
    amplitude: float = 0.1
    params: dict = field(default_factory=dict)


def make_initial(ic, eq, grid, fd=None):
    """Evaluate an initial-condition family on the cell centres of ``grid``."""
    if isinstance(ic, str):
        ic = InitialCondition(ic)
    x = grid.centers
    L = grid.length
    a = ic.amplitude
    if ic.kind == "sinusoidal_3pi":
        s = np.sin(3.0 * np.pi * x / L)
        rho = eq.rho_star * (1.0 + a * s)
        v = eq.v_star * (1.0 - a * s)
    elif ic.kind == "sinusoidal_pi":
        s = np.sin(np.pi * x / L)
        q = eq.q_star * (1.0 + a * s)
        v = eq.v_star * (1.0 - a * s)
        rho = q / v
    elif ic.kind == "linear":
        p = ic.params
        if p:
            q = p["q_slope"] * x + p.get("q_intercept", 0.0)
            v = p["v_slope"] * x + p["v_intercept"]
        else:
            ramp = 2.0 * x / L - 1.0
            v = eq.v_star * (1.0 - a * ramp)
            q = eq.rho_star * (1.0 + a * ramp) * v
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = q / v
    elif ic.kind == "constant_equilibrium":
        rho = np.full_like(x, eq.rho_star)
        v = np.full_like(x, eq.v_star)
    elif ic.kind == "custom":
        rho = np.asarray(ic.params["rho"](x), dtype=float)
        v = np.asarray(ic.params["v"](x), dtype=float)
    else:
        raise ConstructionError(f"unknown initial-condition kind {ic.kind!r}")

    rho_m = fd.rho_m if fd is not None else np.inf
    if not (np.all(np.isfinite(rho)) and np.all(rho > 0) and np.all(rho <= rho_m)):
        raise ConstructionError(f"{ic.kind} profile leaves 0 < rho <= rho_m")
    if not (np.all(np.isfinite(v)) and np.all(v > 0)):
        raise ConstructionError(f"{ic.kind} profile has non-positive speed")
    return TrafficState(np.array(rho, dtype=float), np.array(v, dtype=float), 0.0)


# ---------------------------------------------------------------- flux kernel

def _cell_terms(fd, rho):
    # ghost densities may touch 0 or rho_m transiently
    r = np.clip(rho, 1e-12 * fd.rho_m, fd.rho_m * (1.0 - 1e-12))
    return fd.speed_and_slope(r)


def hll_flux(fd, rho_l, v_l, rho_r, v_r):
    """HLL numerical flux for the ARZ system; returns ``(F_rho, F_y)``."""
    rho = np.concatenate((np.atleast_1d(rho_l), np.atleast_1d(rho_r)))
    v = np.concatenate((np.atleast_1d(v_l), np.atleast_1d(v_r)))
    vel, slope = _cell_terms(fd, rho)
    n = len(rho) // 2
    f = _interface_flux(rho, v, rho * (v - vel), v + rho * slope, n)
    return f


def _interface_flux(rho, v, y, a2, n=None):
    """HLL flux between consecutive cells, or between halves when ``n`` is given."""
    if n is None:
        sl, sr = slice(None, -1), slice(1, None)
    else:
        sl, sr = slice(None, n), slice(n, None)
    lo = np.minimum(v, a2)
    hi = np.maximum(v, a2)
    s_l = np.minimum(np.minimum(lo[sl], lo[sr]), 0.0)
    s_r = np.maximum(np.maximum(hi[sl], hi[sr]), 0.0)
    width = s_r - s_l
    width = np.where(width > 0, width, 1.0)
    frho = rho * v
    fy = y * v
    f_rho = (s_r * frho[sl] - s_l * frho[sr] + s_l * s_r * (rho[sr] - rho[sl])) / width
    f_y = (s_r * fy[sl] - s_l * fy[sr] + s_l * s_r * (y[sr] - y[sl])) / width
    return f_rho, f_y


def ghost_cells(state, eq, u):
    """Inlet and outlet ghost states ``(rho_in, v_in, rho_out, v_out)``."""
    v_in = state.v[0]
    rho_in = eq.q_star / v_in
    q_out = state.rho[-1] * state.v[-1]
    v_out = q_out / eq.rho_star + u
    rho_out = state.rho[-1]
    return rho_in, v_in, rho_out, v_out


def stable_dt(state, fd, dx, cfl):
    vel, slope = _cell_terms(fd, state.rho)
    a2 = state.v + state.rho * slope
    smax = max(np.max(np.abs(state.v)), np.max(np.abs(a2)))
    return cfl * dx / smax


def step(state, cfg, u_boundary, dt=None, info=None, t_end=None):
    """Advance ``state`` by one time step with outlet actuation ``u_boundary`` [m/s].

    ``dt`` defaults to the CFL limit, shortened so as not to pass ``t_end``.
    When ``info`` is a dict it receives the boundary fluxes (``flux_in``,
    ``flux_out``) and the step taken.
    """
    fd, eq = cfg.fd, cfg.eq
    dx = cfg.grid.dx
    rho_in, v_in, rho_out, v_out = ghost_cells(state, eq, u_boundary)
    rho = np.concatenate(([rho_in], state.rho, [rho_out]))
    v = np.concatenate(([v_in], state.v, [v_out]))
    vel, slope = _cell_terms(fd, rho)
    a2 = v + rho * slope
    if dt is None:
        smax = max(np.max(np.abs(v[1:-1])), np.max(np.abs(a2[1:-1])))
        dt = cfg.cfl * dx / smax
        if t_end is not None and state.t + dt > t_end:
            dt = t_end - state.t
    y = rho * (v - vel)
    f_rho, f_y = _interface_flux(rho, v, y, a2)
    new_rho = rho[1:-1] - dt / dx * (f_rho[1:] - f_rho[:-1])
    new_y = (y[1:-1] - dt / dx * (f_y[1:] - f_y[:-1])) * np.exp(-dt / cfg.tau)
    new_state = _to_primitive(fd, new_rho, new_y, state.t + dt)
    if info is not None:
        info.update(dt=dt, flux_in=f_rho[0], flux_out=f_rho[-1])
    return new_state


def _to_primitive(fd, rho, y, t):
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(y))):
        raise BlowUpError("non-finite state", t)
    if rho.min() <= 0.0 or rho.max() > fd.rho_m:
        raise BlowUpError("density left (0, rho_m]", t)
    vel, _ = fd.speed_and_slope(np.minimum(rho, fd.rho_m * (1.0 - 1e-15)))
    return TrafficState(rho, y / rho + vel, t)


# ---------------------------------------------------------------- closed loop

def l2_deviation(state, eq, dx):
    """Nondimensional L2 distance of ``state`` from the equilibrium."""
    d = (state.rho / eq.rho_star - 1.0) ** 2 + (state.v / eq.v_star - 1.0) ** 2
    return float(np.sqrt(np.sum(d) * dx))


@dataclass
class ScenarioResult:
    """Sampled closed-loop trajectory in SI units.

    ``rho`` and ``v`` have shape ``(n_t, n_x)``; ``u`` and ``norm`` have shape
    ``(n_t,)``.  ``norm`` is the nondimensional L2 deviation of the full cell
    state at each sample.  ``warnings`` collects controller diagnostics.
    """

    t: np.ndarray
    x: np.ndarray
    rho: np.ndarray
    v: np.ndarray
    u: np.ndarray
    norm: np.ndarray
    eq: Equilibrium
    controller: str = ""
    n_steps: int = 0
    control_seconds: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def length(self):
        return float(self.x[-1] - self.x[0])

    def to_csv(self, path_or_buf=None):
        """Write ``t,x,rho,v,u`` rows in km/h and veh/km; returns the text if no path."""
        buf = io.StringIO()
        buf.write("#units t=s x=m rho=veh/km v=km/h u=km/h\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "rho", "v", "u"])
        for i, ti in enumerate(self.t):
            ui = repr(float(self.u[i] / KMH))
            for j, xj in enumerate(self.x):
                w.writerow([repr(float(ti)), repr(float(xj)), repr(float(self.rho[i, j] / PER_KM)),
                            repr(float(self.v[i, j] / KMH)), ui])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path, eq):
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        rows = list(csv.DictReader(lines))
        t = np.unique([float(r["t"]) for r in rows])
        x = np.unique([float(r["x"]) for r in rows])
        data = np.array([[float(r["rho"]), float(r["v"]), float(r["u"])] for r in rows])
        data = data.reshape(len(t), len(x), 3)
        rho = data[:, :, 0] * PER_KM
        v = data[:, :, 1] * KMH
        u = data[:, 0, 2] * KMH
        d = (rho / eq.rho_star - 1.0) ** 2 + (v / eq.v_star - 1.0) ** 2
        norm = np.sqrt(np.trapezoid(d, x, axis=1))
        return cls(t, x, rho, v, u, norm, eq)


def run_closed_loop(ic, cfg, controller, initial_state=None):
    """Simulate ``[0, horizon]`` with ``controller`` updating U at every internal step.

    The state is recorded at the internal step nearest to each output time and
    interpolated linearly onto the output abscissae.
    """
    import time as _time

    fd, eq, grid = cfg.fd, cfg.eq, cfg.grid
    state = initial_state.copy() if initial_state is not None else make_initial(ic, eq, grid, fd)
    if controller is not None:
        controller.reset()
    out_t, out_x = cfg.out_t, cfg.out_x
    xc = grid.centers
    rho_out = np.empty((len(out_t), len(out_x)))
    v_out = np.empty_like(rho_out)
    u_out = np.empty(len(out_t))
    norm_out = np.empty(len(out_t))

    def control(s):
        if controller is None:
            return 0.0
        return float(controller.compute(s.t, s, eq))

    def record(k, s, u):
        rho_out[k] = np.interp(out_x, xc, s.rho)
        v_out[k] = np.interp(out_x, xc, s.v)
        u_out[k] = u
        norm_out[k] = l2_deviation(s, eq, grid.dx)

    k = 0
    n_steps = 0
    ctrl_time = 0.0
    c0 = _time.perf_counter()
    u = control(state)
    ctrl_time += _time.perf_counter() - c0
    record(0, state, u)
    k = 1
    prev, prev_u = state, u
    while k < len(out_t):
        t_prev = state.t
        state = step(state, cfg, u, t_end=cfg.horizon)
        n_steps += 1
        c0 = _time.perf_counter()
        u = control(state)
        ctrl_time += _time.perf_counter() - c0
        while k < len(out_t) and state.t >= out_t[k] - 1e-12:
            if abs(prev.t - out_t[k]) < abs(state.t - out_t[k]):
                record(k, prev, prev_u)
            else:
                record(k, state, u)
            k += 1
        prev, prev_u = state, u
        if state.t <= t_prev:
            break
    name = getattr(controller, "name", "open_loop") if controller is not None else "open_loop"
    warnings = list(getattr(controller, "warnings", [])) if controller is not None else []
    return ScenarioResult(out_t.copy(), out_x.copy(), rho_out, v_out, u_out, norm_out, eq,
                          controller=name, n_steps=n_steps, control_seconds=ctrl_time, warnings=warnings)
