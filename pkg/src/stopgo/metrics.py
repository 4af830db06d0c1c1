"""Evaluation of closed-loop results: errors, performance indices, decay fits, timing."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .arz_sim import l2_deviation
from .errors import GridMismatchError
from .units import KMH, PER_KM

__all__ = [
    "DecayFit",
    "EvaluationReport",
    "TimingResult",
    "decay_fit",
    "evaluate",
    "l2_deviation",
    "mse_vs_baseline",
    "performance_indices",
    "render_table",
    "state_errors",
    "timing_bench",
    "timing_compare",
]

FUEL_B0 = 2.5e-3  # 1/s
FUEL_B1 = 2.45e-7  # 1/m
FUEL_B2 = 1.25e-8  # s^2/m^2
FUEL_B3 = 9.5e-5  # s^3/m^2


def _check_same_grid(a, b):
    if a.rho.shape != b.rho.shape or not (np.allclose(a.t, b.t) and np.allclose(a.x, b.x)):
        raise GridMismatchError("results are sampled on different output grids")


def mse_vs_baseline(result, baseline):
    """``mean(((rho - rho_b) / rho*)^2)`` and the same for speed, over all samples."""
    _check_same_grid(result, baseline)
    eq = baseline.eq
    mse_rho = float(np.mean(((result.rho - baseline.rho) / eq.rho_star) ** 2))
    mse_v = float(np.mean(((result.v - baseline.v) / eq.v_star) ** 2))
    return mse_rho, mse_v


def state_errors(result, baseline):
    """Max and mean absolute errors in veh/km and km/h, plus the same relative to the equilibrium."""
    _check_same_grid(result, baseline)
    eq = baseline.eq
    dr = np.abs(result.rho - baseline.rho)
    dv = np.abs(result.v - baseline.v)
    return {
        "max_abs_rho": float(dr.max() / PER_KM),
        "mean_abs_rho": float(dr.mean() / PER_KM),
        "max_abs_v": float(dv.max() / KMH),
        "mean_abs_v": float(dv.mean() / KMH),
        "max_rel_rho": float(dr.max() / eq.rho_star),
        "mean_rel_rho": float(dr.mean() / eq.rho_star),
        "max_rel_v": float(dv.max() / eq.v_star),
        "mean_rel_v": float(dv.mean() / eq.v_star),
    }


def _trapz2(f, t, x):
    return float(np.trapezoid(np.trapezoid(f, x, axis=1), t))


def acceleration(result):
    """Local acceleration ``a = v_t + v v_x`` and its time derivative on the output grid."""
    v = result.v
    v_t = np.gradient(v, result.t, axis=0)
    v_x = np.gradient(v, result.x, axis=1)
    a = v_t + v * v_x
    a_t = np.gradient(a, result.t, axis=0)
    return a, a_t


def performance_indices(result):
    """``(J_fuel, J_comfort, J_TTT)`` in SI units by trapezoidal double integrals."""
    if len(result.t) < 3 or len(result.x) < 3:
        raise ValueError("performance indices need at least 3 samples in t and x")
    a, a_t = acceleration(result)
    rho, v = result.rho, result.v
    rate = np.maximum(0.0, FUEL_B0 + FUEL_B1 * v + FUEL_B2 * v * a + FUEL_B3 * a * a)
    j_fuel = _trapz2(rate * rho, result.t, result.x)
    j_comfort = _trapz2((a * a + a_t * a_t) * rho, result.t, result.x)
    j_ttt = _trapz2(rho, result.t, result.x)
    return j_fuel, j_comfort, j_ttt


@dataclass
class DecayFit:
    rate: float  # positive for a decaying norm
    r_squared: float
    floor: float  # 0 when no plateau is detected
    t_start: float
    t_end: float


def decay_fit(norm, t, window=None, tail_fraction=0.2, floor_rel=1e-3):
    """Exponential fit ``norm ~ C exp(-rate t)`` by least squares on ``log norm``.

    A floor is reported when the final ``tail_fraction`` of the series is flat
    (its own log-slope under a tenth of the main rate) and stays above
    ``floor_rel`` times the initial norm; the fit then stops where the norm
    first comes within twice that floor.  Zeros truncate the window.
    """
    norm = np.asarray(norm, dtype=float)
    t = np.asarray(t, dtype=float)
    lo, hi = (t[0], t[-1]) if window is None else window
    sel = (t >= lo) & (t <= hi)
    tw, nw = t[sel], norm[sel]
    if len(nw) and np.any(nw <= 0):
        k = int(np.argmax(nw <= 0))
        tw, nw = tw[:k], nw[:k]
    if len(nw) < 3:
        raise ValueError("fewer than 3 positive samples in the fit window")

    def fit(tt, nn):
        A = np.column_stack((np.ones_like(tt), tt))
        y = np.log(nn)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        ss = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
        return -float(coef[1]), r2

    n_tail = max(3, int(round(tail_fraction * len(nw))))
    tail_t, tail_n = tw[-n_tail:], nw[-n_tail:]
    floor = float(np.median(tail_n))
    rate_all, _ = fit(tw, nw)
    tail_rate, _ = fit(tail_t, tail_n)
    flat = abs(tail_rate) < 0.1 * max(abs(rate_all), 1e-12)
    if not (flat and floor > floor_rel * nw[0]):
        floor = 0.0
    if floor > 0:
        above = nw > 2.0 * floor
        k = int(np.argmin(above)) if not above.all() else len(nw)
        k = max(k, 3)
        tw, nw = tw[:k], nw[:k]
    rate, r2 = fit(tw, nw)
    return DecayFit(rate, r2, floor, float(tw[0]), float(tw[-1]))


@dataclass
class TimingResult:
    seconds_per_eval: float
    baseline_seconds_per_eval: float
    raw_ratio: float
    amortized_ratio: float
    setup_seconds: float
    baseline_setup_seconds: float
    evals_per_run: int


def timing_bench(controller, state, eq, repetitions=200, rounds=5, warmup=20):
    """Median over ``rounds`` of the mean wall time of ``repetitions`` evaluations."""
    for _ in range(warmup):
        controller.compute(state.t, state, eq)
    means = []
    for _ in range(rounds):
        t0 = time.perf_counter()
        for _ in range(repetitions):
            controller.compute(state.t, state, eq)
        means.append((time.perf_counter() - t0) / repetitions)
    return float(np.median(means))


def timing_compare(candidate, baseline, state, eq, evals_per_run, candidate_setup=0.0, baseline_setup=0.0,
                   repetitions=200, rounds=5):
    """Per-evaluation cost of ``candidate`` against ``baseline``.

    ``raw_ratio`` compares evaluation cost only.  ``amortized_ratio`` adds each
    controller's one-off setup (kernel solve or kernel inference) divided by
    the number of control evaluations in a run.
    """
    tc = timing_bench(candidate, state, eq, repetitions, rounds)
    tb = timing_bench(baseline, state, eq, repetitions, rounds)
    n = max(int(evals_per_run), 1)
    amort_c = tc + candidate_setup / n
    amort_b = tb + baseline_setup / n
    return TimingResult(tc, tb, tb / tc, amort_b / amort_c, candidate_setup, baseline_setup, n)


@dataclass
class EvaluationReport:
    controller: str
    mse_rho: float = float("nan")
    mse_v: float = float("nan")
    max_abs_rho: float = float("nan")  # veh/km
    mean_abs_rho: float = float("nan")
    max_abs_v: float = float("nan")  # km/h
    mean_abs_v: float = float("nan")
    max_rel_rho: float = float("nan")
    mean_rel_rho: float = float("nan")
    j_fuel: float = float("nan")
    j_comfort: float = float("nan")
    j_ttt: float = float("nan")
    decay_rate: float = float("nan")
    decay_r2: float = float("nan")
    floor: float = float("nan")
    final_norm_rel: float = float("nan")
    seconds_per_eval: float = float("nan")
    speedup: float = float("nan")

    @classmethod
    def header(cls):
        return [f.name for f in fields(cls)]

    def row(self):
        return [self.controller] + [repr(float(v)) for k, v in asdict(self).items() if k != "controller"]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        w.writerow(self.row())
        return buf.getvalue()


def evaluate(result, baseline=None, timing=None):
    """Assemble an ``EvaluationReport``; comparisons need a baseline on the same grid."""
    rep = EvaluationReport(controller=result.controller)
    if baseline is not None:
        rep.mse_rho, rep.mse_v = mse_vs_baseline(result, baseline)
        err = state_errors(result, baseline)
        for k in ("max_abs_rho", "mean_abs_rho", "max_abs_v", "mean_abs_v", "max_rel_rho", "mean_rel_rho"):
            setattr(rep, k, err[k])
    rep.j_fuel, rep.j_comfort, rep.j_ttt = performance_indices(result)
    try:
        fit = decay_fit(result.norm, result.t)
        rep.decay_rate, rep.decay_r2, rep.floor = fit.rate, fit.r_squared, fit.floor
    except ValueError:
        pass
    rep.final_norm_rel = float(result.norm[-1] / result.norm[0]) if result.norm[0] > 0 else 0.0
    if timing is not None:
        rep.seconds_per_eval = timing.seconds_per_eval
        rep.speedup = timing.amortized_ratio
    return rep


def render_table(reports, columns=None):
    """Plain-text table of selected report columns."""
    columns = columns or ["controller", "mse_rho", "mse_v", "max_abs_rho", "max_abs_v", "j_fuel", "j_comfort",
                          "j_ttt", "final_norm_rel"]
    rows = [columns]
    for r in reports:
        d = asdict(r)
        rows.append([d[c] if c == "controller" else f"{d[c]:.4g}" for c in columns])
    widths = [max(len(str(row[i])) for row in rows) for i in range(len(columns))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)) for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def relative_change(value, baseline):
    return (value - baseline) / baseline
