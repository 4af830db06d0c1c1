"""Fitting the three-parameter diagram to aggregated density-flow cells."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import CalibrationError, DataFileError
from .fundamental_diagram import ThreeParamFD
from .units import PER_HOUR, PER_KM


def rho_max_from_geometry(lanes, vehicle_length, safety_factor):
    """Jam density [veh/m] for ``lanes`` lanes of vehicles ``vehicle_length`` metres long."""
    if not (lanes > 0 and vehicle_length > 0 and safety_factor > 0):
        raise ValueError("lanes, vehicle length and safety factor must be positive")
    return lanes / (vehicle_length * safety_factor)


@dataclass
class AggregatedGrid:
    """Cell averages; ``density`` in veh/m and ``flow`` in veh/s."""

    x_index: np.ndarray
    t_index: np.ndarray
    density: np.ndarray
    flow: np.ndarray
    dx: float = 20.0
    dt: float = 15.0

    def __post_init__(self):
        n = len(self.density)
        if not (len(self.x_index) == len(self.t_index) == len(self.flow) == n):
            raise ValueError("grid columns have different lengths")
        if np.any(self.density <= 0) or np.any(self.flow < 0):
            raise ValueError("densities must be positive and flows non-negative")

    def __len__(self):
        return len(self.density)


_COLUMNS = ("x_index", "t_index", "density", "flow")


def ingest_grid_csv(path, rho_m=None, dx=20.0, dt=15.0):
    """Read ``x_index,t_index,density,flow`` (veh/km, veh/h) into an SI grid.

    Rows with missing or non-numeric fields, non-positive density, negative
    flow, or density above ``rho_m`` (veh/m) are rejected with their line number.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataFileError(f"{path}: missing column(s) {', '.join(missing)}")
        xi, ti, rho, q = [], [], [], []
        for row in reader:
            line = reader.line_num
            try:
                x, t = int(row["x_index"]), int(row["t_index"])
                d = float(row["density"]) * PER_KM
                f = float(row["flow"]) * PER_HOUR
            except (TypeError, ValueError):
                raise DataFileError(f"{path}:{line}: non-numeric or missing field") from None
            if not (np.isfinite(d) and np.isfinite(f)):
                raise DataFileError(f"{path}:{line}: non-finite value")
            if d <= 0 or (rho_m is not None and d > rho_m):
                raise DataFileError(f"{path}:{line}: density {d / PER_KM:g} veh/km out of range")
            if f < 0:
                raise DataFileError(f"{path}:{line}: negative flow")
            xi.append(x)
            ti.append(t)
            rho.append(d)
            q.append(f)
    return AggregatedGrid(np.array(xi, dtype=int), np.array(ti, dtype=int), np.array(rho), np.array(q), dx, dt)


def write_grid_csv(grid, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_COLUMNS)
        for x, t, d, f in zip(grid.x_index, grid.t_index, grid.density, grid.flow):
            w.writerow([int(x), int(t), repr(float(d / PER_KM)), repr(float(f / PER_HOUR))])


@dataclass
class FitResult:
    fd: ThreeParamFD
    rmse: float  # veh/h
    objective: float
    start_objectives: list


def _shape(r, kappa, p):
    a = np.sqrt(1.0 + kappa**2 * p**2)
    b = np.sqrt(1.0 + kappa**2 * (1.0 - p) ** 2)
    return a + (b - a) * r - np.sqrt(1.0 + kappa**2 * (r - p) ** 2)


def fit_three_param(grid, rho_m, p_starts=(0.2, 0.3, 0.4), kappa_starts=(5.0, 15.0, 30.0), min_obs=50):
    """Least-squares fit of ``(zeta, kappa, p)`` by Nelder-Mead from a fixed grid of starts.

    The objective is the sum of squared flow residuals in veh/h divided by
    the sum of squared flows.  ``zeta`` at each start is the closed-form
    least-squares scale for that shape.
    """
    if len(grid) < min_obs:
        raise CalibrationError(f"need at least {min_obs} observations, got {len(grid)}")
    r = grid.density / rho_m
    q = grid.flow / PER_HOUR
    if np.ptp(r) < 0.05:
        raise CalibrationError("densities form a single cluster; the diagram is not identifiable")

    scale = float(q @ q)  # makes the simplex tolerances independent of flow units

    def objective(theta):
        zeta, kappa, p = theta
        if zeta <= 0 or kappa <= 0 or not 0 < p < 1:
            return np.inf
        res = zeta * _shape(r, kappa, p) - q
        return float(res @ res) / scale

    best, starts = None, []
    for p0 in p_starts:
        for k0 in kappa_starts:
            s = _shape(r, k0, p0)
            z0 = float(s @ q / (s @ s))
            x0 = np.array([z0, k0, p0])
            starts.append(objective(x0))
            opt = minimize(objective, x0, method="Nelder-Mead",
                           options={"xatol": 1e-9, "fatol": 1e-18, "maxiter": 3000})
            # a restart from the optimum shakes the simplex out of early collapse
            opt = minimize(objective, opt.x, method="Nelder-Mead",
                           options={"xatol": 1e-11, "fatol": 1e-20, "maxiter": 3000})
            if best is None or opt.fun < best.fun:
                best = opt
    zeta, kappa, p = best.x
    fd = ThreeParamFD(zeta=zeta * PER_HOUR, kappa_fd=kappa, p_fd=p, rho_m=rho_m)
    return FitResult(fd, float(np.sqrt(best.fun * scale / len(q))), float(best.fun), starts)


def synthetic_grid(fd, n=200, noise=0.01, seed=0, span=(0.05, 0.95)):
    """Cells sampled uniformly in density with multiplicative Gaussian flow noise."""
    rng = np.random.default_rng(seed)
    rho = rng.uniform(span[0], span[1], n) * fd.rho_m
    flow = np.asarray(fd.flow(rho)) * (1.0 + noise * rng.standard_normal(n))
    idx = np.arange(n)
    return AggregatedGrid(idx % 25, idx // 25, rho, np.maximum(flow, 0.0))


def fd_config_snippet(fd):
    """Key-value lines (CLI config syntax) describing a three-parameter diagram."""
    return "\n".join([
        "fd = three_param",
        f"zeta_vehh = {float(fd.zeta / PER_HOUR)!r}",
        f"kappa = {float(fd.kappa_fd)!r}",
        f"p = {float(fd.p_fd)!r}",
        f"rho_m_vehkm = {float(fd.rho_m / PER_KM)!r}",
    ]) + "\n"
