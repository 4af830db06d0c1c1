"""Training corpora: ``lambda2 -> kernels`` and ``lambda2 -> U(t)``.

Datasets are stored as one CSV per sample plus ``manifest.jsonl`` (one
record per sample: lambda2, file path, config hash, split tag) and
``dataset.json`` with the generating configuration.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .arz_sim import InitialCondition
from .controllers import BacksteppingController
from .errors import DataFileError, StopGoError
from .fundamental_diagram import critical_density, equilibrium_from_density
from .kernels import TriangularGrid, solve_kernels
from .presets import Scenario, reference_fd
from .units import PER_KM, kmh_to_ms

log = logging.getLogger(__name__)


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def split_indices(n, seed, ratio=0.9):
    """Deterministic shuffled train/test split (at least one test sample when n >= 2)."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratio * n))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _fd_config(fd):
    return {"type": type(fd).__name__, **{k: float(v) for k, v in vars(fd).items()}}


def _write_manifest(path, records):
    with open(path, "w", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _read_manifest(path):
    with open(path) as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


@dataclass
class KernelDataset:
    """Kernel samples on a shared triangular grid.

    ``kw`` and ``kv`` have shape ``(n_samples, n_nodes)`` ordered like
    ``grid.nodes()``.  Speeds are in m/s, kernels in 1/m.
    """

    lambda1: np.ndarray
    lambda2: np.ndarray
    v_star: np.ndarray
    rho_star: np.ndarray
    kw: np.ndarray
    kv: np.ndarray
    grid: TriangularGrid
    tau: float
    train_idx: np.ndarray
    test_idx: np.ndarray
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.lambda2)

    @property
    def length(self):
        return self.grid.length

    @property
    def hash(self):
        return config_hash(self.config)

    def nodes(self):
        return self.grid.nodes()

    def half(self):
        """Same test split, every other training sample (for PINO).

        Samples are ordered by density, so striding keeps the whole interval covered.
        """
        tr = self.train_idx[::2]
        return KernelDataset(self.lambda1, self.lambda2, self.v_star, self.rho_star, self.kw, self.kv,
                             self.grid, self.tau, tr, self.test_idx, dict(self.config, half=True))

    def save(self, directory):
        os.makedirs(os.path.join(directory, "samples"), exist_ok=True)
        split = np.empty(len(self), dtype=object)
        split[self.train_idx] = "train"
        split[self.test_idx] = "test"
        nodes = self.nodes()
        h = self.hash
        records = []
        for i in range(len(self)):
            rel = f"samples/kernel_{i:05d}.csv"
            with open(os.path.join(directory, rel), "w", newline="\n") as fh:
                fh.write("x,xi,kw,kv\n")
                for (x, xi), a, b in zip(nodes, self.kw[i], self.kv[i]):
                    fh.write(f"{float(x)!r},{float(xi)!r},{float(a)!r},{float(b)!r}\n")
            records.append({"index": i, "lambda2": float(self.lambda2[i]), "lambda1": float(self.lambda1[i]),
                            "v_star": float(self.v_star[i]), "rho_star": float(self.rho_star[i]),
                            "path": rel, "config_hash": h, "split": split[i] or "unused"})
        _write_manifest(os.path.join(directory, "manifest.jsonl"), records)
        with open(os.path.join(directory, "dataset.json"), "w") as fh:
            json.dump({"kind": "kernel", "tau": self.tau, "grid_n": self.grid.n, "length": self.length,
                       "config": self.config, "config_hash": h}, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "dataset.json")) as fh:
            meta = json.load(fh)
        if meta.get("kind") != "kernel":
            raise DataFileError(f"{directory} is not a kernel dataset")
        recs = _read_manifest(os.path.join(directory, "manifest.jsonl"))
        grid = TriangularGrid(int(meta["grid_n"]), float(meta["length"]))
        kw, kv = [], []
        for r in recs:
            data = np.loadtxt(os.path.join(directory, r["path"]), delimiter=",", skiprows=1, ndmin=2)
            if len(data) != grid.n * (grid.n + 1) // 2:
                raise DataFileError(f"sample {r['path']} does not match the dataset grid")
            kw.append(data[:, 2])
            kv.append(data[:, 3])
        col = lambda k: np.array([r[k] for r in recs], dtype=float)  # noqa: E731
        tr = np.array([r["index"] for r in recs if r["split"] == "train"], dtype=int)
        te = np.array([r["index"] for r in recs if r["split"] == "test"], dtype=int)
        return cls(col("lambda1"), col("lambda2"), col("v_star"), col("rho_star"), np.array(kw), np.array(kv),
                   grid, float(meta["tau"]), tr, te, meta["config"])


def _lambda2_of(fd, rho):
    return equilibrium_from_density(fd, rho).lambda2


def _rho_for_lambda2(fd, lam, lo, hi):
    return brentq(lambda r: _lambda2_of(fd, r) - lam, lo, hi, xtol=1e-14)


def _solve_one(args):
    fd, rho, tau, length, n = args
    try:
        eq = equilibrium_from_density(fd, rho)
        kf = solve_kernels(eq, tau, length, TriangularGrid(n, length))
        kw, kv = kf.values()
        if not (np.all(np.isfinite(kw)) and np.all(np.isfinite(kv))):
            raise FloatingPointError("non-finite kernel")
        return eq, kw, kv, None
    except (StopGoError, ValueError, FloatingPointError) as exc:
        return None, None, None, str(exc)


def gen_kernel_dataset(n_samples, rho_range=(90.0, 130.0), grid_n=101, seed=0, fd=None, tau=60.0,
                       length=500.0, sampling="rho", jobs=1):
    """Sample equilibria, solve their kernels and split 9:1.

    ``rho_range`` is in veh/km.  ``sampling="rho"`` draws ``rho*`` uniformly;
    ``sampling="lambda2"`` draws ``lambda2`` uniformly over the induced interval.
    Failed solves are skipped and logged.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    fd = fd or reference_fd()
    lo, hi = rho_range[0] * PER_KM, rho_range[1] * PER_KM
    if lo <= critical_density(fd):
        raise ValueError("density range reaches the free-flow regime")
    rng = np.random.default_rng(seed)
    if sampling == "rho":
        rhos = rng.uniform(lo, hi, n_samples)
    elif sampling == "lambda2":
        l_lo, l_hi = _lambda2_of(fd, lo), _lambda2_of(fd, hi)
        rhos = np.array([_rho_for_lambda2(fd, lam, lo, hi) for lam in rng.uniform(l_lo, l_hi, n_samples)])
    else:
        raise ValueError(f"unknown sampling {sampling!r}")
    rhos = np.unique(rhos)  # duplicates would straddle the split
    tasks = [(fd, float(r), tau, length, grid_n) for r in rhos]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_solve_one, tasks))
    else:
        results = [_solve_one(t) for t in tasks]
    eqs, kws, kvs = [], [], []
    skipped = 0
    for r, (eq, kw, kv, err) in zip(rhos, results):
        if err is not None:
            log.warning("kernel solve failed at rho*=%.6g veh/m: %s", r, err)
            skipped += 1
            continue
        eqs.append(eq)
        kws.append(kw)
        kvs.append(kv)
    if not eqs:
        raise StopGoError("no kernel sample could be generated")
    log.info("kernel dataset: %d samples (%d skipped)", len(eqs), skipped)
    tr, te = split_indices(len(eqs), seed)
    cfg = {"n_requested": n_samples, "rho_range_vehkm": list(map(float, rho_range)), "grid_n": grid_n,
           "seed": seed, "fd": _fd_config(fd), "tau": tau, "length": length, "sampling": sampling,
           "n_generated": len(eqs), "skipped": skipped,
           "lambda2_interval": [_lambda2_of(fd, lo), _lambda2_of(fd, hi)]}
    arr = lambda k: np.array([getattr(e, k) for e in eqs])  # noqa: E731
    return KernelDataset(arr("lambda1"), arr("lambda2"), arr("v_star"), arr("rho_star"), np.array(kws),
                         np.array(kvs), TriangularGrid(grid_n, length), tau, tr, te, cfg)


@dataclass
class ControlTrajectoryDataset:
    """Closed-loop backstepping actuation ``U(t)`` [m/s] on a shared time grid."""

    lambda2: np.ndarray
    rho_star: np.ndarray
    t: np.ndarray
    u: np.ndarray
    ic_kind: str
    train_idx: np.ndarray
    test_idx: np.ndarray
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.lambda2)

    @property
    def horizon(self):
        return float(self.t[-1])

    @property
    def hash(self):
        return config_hash(self.config)

    def save(self, directory):
        os.makedirs(os.path.join(directory, "samples"), exist_ok=True)
        split = np.full(len(self), "unused", dtype=object)
        split[self.train_idx] = "train"
        split[self.test_idx] = "test"
        h = self.hash
        records = []
        for i in range(len(self)):
            rel = f"samples/control_{i:05d}.csv"
            with open(os.path.join(directory, rel), "w", newline="\n") as fh:
                fh.write("t,u\n")
                for ti, ui in zip(self.t, self.u[i]):
                    fh.write(f"{float(ti)!r},{float(ui)!r}\n")
            records.append({"index": i, "lambda2": float(self.lambda2[i]), "rho_star": float(self.rho_star[i]),
                            "path": rel, "config_hash": h, "split": split[i]})
        _write_manifest(os.path.join(directory, "manifest.jsonl"), records)
        with open(os.path.join(directory, "dataset.json"), "w") as fh:
            json.dump({"kind": "control", "ic_kind": self.ic_kind, "config": self.config, "config_hash": h},
                      fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "dataset.json")) as fh:
            meta = json.load(fh)
        if meta.get("kind") != "control":
            raise DataFileError(f"{directory} is not a control dataset")
        recs = _read_manifest(os.path.join(directory, "manifest.jsonl"))
        us, t = [], None
        for r in recs:
            data = np.loadtxt(os.path.join(directory, r["path"]), delimiter=",", skiprows=1, ndmin=2)
            t = data[:, 0] if t is None else t
            us.append(data[:, 1])
        tr = np.array([r["index"] for r in recs if r["split"] == "train"], dtype=int)
        te = np.array([r["index"] for r in recs if r["split"] == "test"], dtype=int)
        return cls(np.array([r["lambda2"] for r in recs]), np.array([r["rho_star"] for r in recs]), t,
                   np.array(us), meta["ic_kind"], tr, te, meta["config"])


def _control_run(args):
    from .arz_sim import run_closed_loop
    from .errors import BlowUpError

    scenario, n_cells, kernel_n = args
    try:
        cfg = scenario.sim_config(n_cells=n_cells)
        ctrl = BacksteppingController.from_equilibrium(cfg.eq, scenario.tau, scenario.length,
                                                       TriangularGrid(kernel_n, scenario.length))
        res = run_closed_loop(scenario.ic, cfg, ctrl)
        return cfg.eq, res.t, res.u, None
    except (BlowUpError, StopGoError, ValueError) as exc:
        return None, None, None, str(exc)


def gen_control_dataset(n_samples, ic_kind="sinusoidal_3pi", scenario=None, seed=0, rho_range=(90.0, 130.0),
                        n_cells=100, kernel_n=101, jobs=1):
    """One closed-loop backstepping run per sampled ``rho*``; records ``U`` on the output grid."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    base = scenario or Scenario("paper_4_1", reference_fd(), rho_star=120.0 * PER_KM)
    base = base.with_(ic=InitialCondition(ic_kind) if isinstance(ic_kind, str) else ic_kind)
    rng = np.random.default_rng(seed)
    rhos = np.unique(rng.uniform(rho_range[0] * PER_KM, rho_range[1] * PER_KM, n_samples))
    tasks = [(base.with_(rho_star=float(r), q_star=None), n_cells, kernel_n) for r in rhos]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_control_run, tasks))
    else:
        results = [_control_run(t) for t in tasks]
    lam, rs, us, t = [], [], [], None
    skipped = 0
    for r, (eq, tt, u, err) in zip(rhos, results):
        if err is not None:
            log.warning("closed-loop run failed at rho*=%.6g veh/m: %s", r, err)
            skipped += 1
            continue
        t = tt
        lam.append(eq.lambda2)
        rs.append(eq.rho_star)
        us.append(u)
    if not lam:
        raise StopGoError("no control sample could be generated")
    tr, te = split_indices(len(lam), seed)
    kind = base.ic.kind
    cfg = {"n_requested": n_samples, "ic_kind": kind, "amplitude": base.ic.amplitude, "seed": seed,
           "rho_range_vehkm": list(map(float, rho_range)), "n_cells": n_cells, "kernel_n": kernel_n,
           "fd": _fd_config(base.fd), "tau": base.tau, "length": base.length, "horizon": base.horizon,
           "n_generated": len(lam), "skipped": skipped,
           "lambda2_interval": [_lambda2_of(base.fd, rho_range[0] * PER_KM),
                                _lambda2_of(base.fd, rho_range[1] * PER_KM)]}
    return ControlTrajectoryDataset(np.array(lam), np.array(rs), np.asarray(t), np.array(us), kind, tr, te, cfg)


def lambda2_kmh_interval(fd=None, rho_range=(90.0, 130.0)):
    """Induced ``lambda2`` interval in km/h for a density range in veh/km."""
    fd = fd or reference_fd()
    return tuple(_lambda2_of(fd, r * PER_KM) / kmh_to_ms(1.0) for r in rho_range)
