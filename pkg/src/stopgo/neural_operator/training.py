"""Adam training loops for the operator, PINO, PINN and control-law models."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import TrainingError
from ..kernels import TriangularGrid, solve_kernels
from .deeponet import DeepOperatorModel, KernelPINN
from .losses import CollocationSet, data_loss, physics_loss
from .network import AdamState, DenseNetwork, adam_update


@dataclass
class TrainConfig:
    lr: float = 1e-4
    decay_every: int = 200
    decay_factor: float = 0.5
    epochs: int = 1000
    batch_size: int = 20
    w_data: float = 1.0
    w_physics: float = 1.0
    seed: int = 0
    p: int = 32
    branch_hidden: tuple = (64, 64)
    trunk_hidden: tuple = (64, 64)
    points_per_batch: int | None = None  # random subset of grid nodes per step; None = all
    h_fd_rel: float = 1e-3
    kv_sign: float = 1.0
    log_every: int = 0

    def __post_init__(self):
        for k in ("lr", "decay_every", "decay_factor", "epochs", "batch_size", "p", "h_fd_rel"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.w_data < 0 or self.w_physics < 0:
            raise ValueError("loss weights must be non-negative")
        self.branch_hidden = tuple(int(w) for w in self.branch_hidden)
        self.trunk_hidden = tuple(int(w) for w in self.trunk_hidden)

    def to_dict(self):
        return asdict(self)

    @property
    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def lr_at(self, epoch):
        return self.lr * self.decay_factor ** (epoch // self.decay_every)


@dataclass
class TrainHistory:
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)
    physics: list = field(default_factory=list)


def _check_grads(grads, epoch, loss):
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block {k} at epoch {epoch} (loss={loss!r})")


def _standardize_stats(values):
    mean = values.mean(axis=tuple(range(values.ndim - 1)))
    std = values.std(axis=tuple(range(values.ndim - 1)))
    return mean, np.where(std > 0, std, 1.0)


def _lambda2_interval(ds):
    """Sampling interval recorded by the generator, else the training span."""
    if "lambda2_interval" in ds.config:
        lo, hi = map(float, ds.config["lambda2_interval"])
    else:
        lam = ds.lambda2[ds.train_idx]
        lo, hi = float(lam.min()), float(lam.max())
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


# ---------------------------------------------------------------- kernel operator

def kernel_targets(ds, idx):
    """Physical kernel targets ``(len(idx), n_nodes, 2)``."""
    return np.stack((ds.kw[idx], ds.kv[idx]), axis=-1)


def init_kernel_model(ds, cfg):
    if len(ds.train_idx) == 0:
        raise TrainingError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    lo, hi = _lambda2_interval(ds)
    mean, std = _standardize_stats(kernel_targets(ds, ds.train_idx))
    norm = dict(lambda2_lo=lo, lambda2_hi=hi, trunk_lo=[0.0, 0.0], trunk_hi=[ds.length, ds.length],
                out_mean=mean, out_std=std)
    model = DeepOperatorModel.create(2, cfg.p, 2, norm, rng, cfg.branch_hidden, cfg.trunk_hidden, kind="kernel")
    model.meta.update(seed=cfg.seed, config_hash=cfg.hash, dataset_hash=ds.hash, tau=ds.tau, length=ds.length)
    return model


def kernel_batch_loss(model, ds, batch, points, cfg, physics):
    """Composite loss and parameter gradients for samples ``batch`` at node indices ``points``.

    With ``physics`` the outputs are also evaluated at the shifted and
    boundary collocation points and the kernel-equation loss is added.
    Returns ``(loss, grads, parts)``.
    """
    nodes = ds.nodes()[points]
    target = model.standardize(kernel_targets(ds, batch)[:, points])
    u = model.normalize_lambda2(ds.lambda2[batch])
    parts = {}
    if physics:
        colloc = CollocationSet.build(nodes, ds.grid.axis, cfg.h_fd_rel * ds.length)
        out, cache = model.forward(u, model.normalize_points(colloc.points), cache=True)
        base = out[:, : len(nodes)]
    else:
        out, cache = model.forward(u, model.normalize_points(nodes), cache=True)
        base = out
    ld, gd = data_loss(base, target)
    grad_out = np.zeros_like(out)
    grad_out[:, : len(nodes)] = cfg.w_data * gd
    loss = cfg.w_data * ld
    parts["data"] = ld
    if physics:
        lp, gp, pp = physics_loss(out, colloc, ds.lambda1[batch], ds.lambda2[batch], ds.tau, ds.v_star[batch],
                                  model.norm["out_mean"], model.norm["out_std"], ds.length, cfg.kv_sign)
        grad_out += cfg.w_physics * gp
        loss += cfg.w_physics * lp
        parts["physics"] = lp
        parts.update(pp)
    return loss, model.backward(cache, grad_out), parts


def kernel_test_loss(model, ds, idx=None):
    idx = ds.test_idx if idx is None else idx
    if len(idx) == 0:
        return float("nan")
    out = model.forward(model.normalize_lambda2(ds.lambda2[idx]), model.normalize_points(ds.nodes()))
    return data_loss(out, model.standardize(kernel_targets(ds, idx)))[0]


def _train_kernel(ds, cfg, physics, model=None):
    model = model or init_kernel_model(ds, cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    state = AdamState.like(model.params)
    hist = TrainHistory()
    n_nodes = ds.kw.shape[1]
    train = np.asarray(ds.train_idx)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm = rng.permutation(train)
        tot, phys, nb = 0.0, 0.0, 0
        for s in range(0, len(perm), cfg.batch_size):
            batch = perm[s:s + cfg.batch_size]
            if cfg.points_per_batch and cfg.points_per_batch < n_nodes:
                points = np.sort(rng.choice(n_nodes, cfg.points_per_batch, replace=False))
            else:
                points = np.arange(n_nodes)
            loss, grads, parts = kernel_batch_loss(model, ds, batch, points, cfg, physics)
            _check_grads(grads, epoch, loss)
            adam_update(model.params, grads, state, lr)
            tot += loss
            phys += parts.get("physics", 0.0)
            nb += 1
        hist.train.append(tot / nb)
        hist.physics.append(phys / nb)
        hist.test.append(kernel_test_loss(model, ds))
        if cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            print(f"epoch {epoch + 1}: train {hist.train[-1]:.3e} test {hist.test[-1]:.3e}")
    model.meta.update(epochs=cfg.epochs, final_train=hist.train[-1], final_test=hist.test[-1])
    return model, hist


def train_no(ds, cfg=None, model=None):
    """Data-only operator training; returns ``(model, history)``."""
    return _train_kernel(ds, cfg or TrainConfig(), physics=False, model=model)


def train_pino(ds, cfg=None, model=None):
    """Data plus kernel-equation loss; pass a reduced dataset (``ds.half()``)."""
    return _train_kernel(ds, cfg or TrainConfig(), physics=True, model=model)


# ---------------------------------------------------------------- single-instance PINN

@dataclass
class PINNProblem:
    """Fixed-instance data for ``train_pinn``."""

    eq: object
    tau: float
    grid: TriangularGrid
    kw: np.ndarray
    kv: np.ndarray

    @classmethod
    def from_equilibrium(cls, eq, tau, length, grid_n=101):
        kf = solve_kernels(eq, tau, length, TriangularGrid(grid_n, length))
        kw, kv = kf.values()
        return cls(eq, tau, kf.grid, kw, kv)

    @property
    def targets(self):
        return np.stack((self.kw, self.kv), axis=-1)


def init_pinn(problem, cfg):
    rng = np.random.default_rng(cfg.seed)
    L = problem.grid.length
    mean, std = _standardize_stats(problem.targets)
    norm = dict(trunk_lo=[0.0, 0.0], trunk_hi=[L, L], out_mean=mean, out_std=std)
    net = DenseNetwork([2, *cfg.trunk_hidden, 2], rng)
    pinn = KernelPINN(net, problem.eq.lambda2, norm)
    pinn.meta.update(seed=cfg.seed, config_hash=cfg.hash, tau=problem.tau, length=L,
                     lambda1=problem.eq.lambda1, v_star=problem.eq.v_star)
    return pinn


def pinn_batch_loss(pinn, problem, points, cfg):
    """Data plus kernel-equation loss of the single-instance network at node indices ``points``."""
    nodes = problem.grid.nodes()[points]
    L = problem.grid.length
    colloc = CollocationSet.build(nodes, problem.grid.axis, cfg.h_fd_rel * L)
    out, hs = pinn.forward(pinn.normalize_points(colloc.points), cache=True)
    base = out[: len(nodes)]
    ld, gd = data_loss(base, pinn.standardize(problem.targets[points]))
    eq = problem.eq
    lp, gp, parts = physics_loss(out[None], colloc, [eq.lambda1], [eq.lambda2], problem.tau, [eq.v_star],
                                 pinn.norm["out_mean"], pinn.norm["out_std"], L, cfg.kv_sign)
    grad = cfg.w_physics * gp[0]
    grad[: len(nodes)] += cfg.w_data * gd
    parts = dict(parts, data=ld, physics=lp)
    return cfg.w_data * ld + cfg.w_physics * lp, pinn.backward(hs, grad), parts


def train_pinn(problem, cfg=None):
    """Fit the single-instance kernel network; an epoch is one pass over the grid nodes."""
    cfg = cfg or TrainConfig()
    pinn = init_pinn(problem, cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    state = AdamState.like(pinn.params)
    hist = TrainHistory()
    n_nodes = len(problem.kw)
    chunk = cfg.points_per_batch or n_nodes
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm = rng.permutation(n_nodes)
        tot, phys, nb = 0.0, 0.0, 0
        for s in range(0, n_nodes, chunk):
            points = np.sort(perm[s:s + chunk])
            loss, grads, parts = pinn_batch_loss(pinn, problem, points, cfg)
            _check_grads(grads, epoch, loss)
            adam_update(pinn.params, grads, state, lr)
            tot += loss
            phys += parts["physics"]
            nb += 1
        hist.train.append(tot / nb)
        hist.physics.append(phys / nb)
        if cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            print(f"epoch {epoch + 1}: train {hist.train[-1]:.3e}")
    pinn.meta.update(epochs=cfg.epochs, final_train=hist.train[-1])
    return pinn, hist


# ---------------------------------------------------------------- control law

def init_control_model(ds, cfg):
    if len(ds.train_idx) == 0:
        raise TrainingError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    lo, hi = _lambda2_interval(ds)
    mean, std = _standardize_stats(ds.u[ds.train_idx][..., None])
    norm = dict(lambda2_lo=lo, lambda2_hi=hi, trunk_lo=[0.0], trunk_hi=[ds.horizon], out_mean=mean,
                out_std=std)
    model = DeepOperatorModel.create(1, cfg.p, 1, norm, rng, cfg.branch_hidden, cfg.trunk_hidden, kind="control")
    model.meta.update(seed=cfg.seed, config_hash=cfg.hash, dataset_hash=ds.hash, ic_kind=ds.ic_kind)
    return model


def control_batch_loss(model, ds, batch):
    u = model.normalize_lambda2(ds.lambda2[batch])
    out, cache = model.forward(u, model.normalize_points(ds.t), cache=True)
    loss, g = data_loss(out, model.standardize(ds.u[batch][..., None]))
    return loss, model.backward(cache, g)


def control_test_loss(model, ds, idx=None):
    idx = ds.test_idx if idx is None else idx
    if len(idx) == 0:
        return float("nan")
    out = model.forward(model.normalize_lambda2(ds.lambda2[idx]), model.normalize_points(ds.t))
    return data_loss(out, model.standardize(ds.u[idx][..., None]))[0]


def train_control_law(ds, cfg=None, model=None):
    cfg = cfg or TrainConfig()
    model = model or init_control_model(ds, cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    state = AdamState.like(model.params)
    hist = TrainHistory()
    train = np.asarray(ds.train_idx)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm = rng.permutation(train)
        tot, nb = 0.0, 0
        for s in range(0, len(perm), cfg.batch_size):
            loss, grads = control_batch_loss(model, ds, perm[s:s + cfg.batch_size])
            _check_grads(grads, epoch, loss)
            adam_update(model.params, grads, state, lr)
            tot += loss
            nb += 1
        hist.train.append(tot / nb)
        hist.test.append(control_test_loss(model, ds))
        if cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            print(f"epoch {epoch + 1}: train {hist.train[-1]:.3e} test {hist.test[-1]:.3e}")
    model.meta.update(epochs=cfg.epochs, final_train=hist.train[-1], final_test=hist.test[-1])
    return model, hist
