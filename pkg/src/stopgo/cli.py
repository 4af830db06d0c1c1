"""Command-line entry point: ``stopgo <command> [options]``.

Commands: simulate, gen-data, train, evaluate, calibrate, compare.  Every
command accepts ``--config FILE`` with ``key = value`` lines (keys are the
long option names, with ``-`` or ``_``); flags on the command line win.

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import metrics
from .arz_sim import ScenarioResult, run_closed_loop
from .calibration import fd_config_snippet, fit_three_param, ingest_grid_csv, rho_max_from_geometry
from .controllers import (
    BacksteppingController,
    NOControlLaw,
    NOKernelController,
    OpenLoop,
    PIController,
    PINNKernelController,
    PINOKernelController,
)
from .dataset_gen import ControlTrajectoryDataset, KernelDataset, gen_control_dataset, gen_kernel_dataset
from .errors import ModelFileError, StopGoError
from .fundamental_diagram import GreenshieldsFD, ThreeParamFD, equilibrium_from_density
from .kernels import TriangularGrid, solve_kernels
from .neural_operator import (
    PINNProblem,
    TrainConfig,
    load_model,
    save_model,
    train_control_law,
    train_no,
    train_pinn,
    train_pino,
)
from .presets import PRESETS, get_preset
from .svg import heatmap
from .units import KMH, PER_HOUR, PER_KM

CONTROLLERS = ("open_loop", "backstepping", "pi", "no_kernel", "pino_kernel", "pinn_kernel", "no_control_law")
MODEL_CONTROLLERS = {"no_kernel": "no", "pino_kernel": "pino", "pinn_kernel": "pinn", "no_control_law": "control"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config files

def parse_config(path):
    """``key = value`` lines; ``#`` starts a comment.  Returns a dict of strings."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _echo_config(args, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        for k in sorted(vars(args)):
            if k in ("func", "config", "command"):
                continue
            v = getattr(args, k)
            if v is None:
                continue
            if isinstance(v, list):
                v = ",".join(map(str, v))
            fh.write(f"{k} = {v}\n")


def _fd_from_config(cfg):
    kind = cfg.get("fd", "three_param")
    if kind == "three_param":
        return ThreeParamFD(zeta=float(cfg["zeta_vehh"]) * PER_HOUR, kappa_fd=float(cfg["kappa"]),
                            p_fd=float(cfg["p"]), rho_m=float(cfg["rho_m_vehkm"]) * PER_KM)
    if kind == "greenshields":
        return GreenshieldsFD(v_f=float(cfg["v_f_kmh"]) * KMH, rho_m=float(cfg["rho_m_vehkm"]) * PER_KM)
    raise UsageError(f"unknown fd kind {kind!r}")


def _scenario(args):
    sc = get_preset(args.preset)
    if getattr(args, "fd_config", None):
        sc = sc.with_(fd=_fd_from_config(parse_config(args.fd_config)))
    if getattr(args, "rho_star", None):
        sc = sc.with_(rho_star=args.rho_star * PER_KM, q_star=None)
    if getattr(args, "horizon", None):
        sc = sc.with_(horizon=args.horizon)
    if getattr(args, "tau", None):
        sc = sc.with_(tau=args.tau)
    if getattr(args, "n_cells", None):
        sc = sc.with_(n_cells=args.n_cells)
    return sc


def _models(specs):
    """``kind=path`` entries (a bare path is keyed ``default``)."""
    out = {}
    for s in specs or []:
        for item in str(s).split(","):
            item = item.strip()
            if not item:
                continue
            k, _, p = item.rpartition("=")
            out[k or "default"] = p
    return out


def build_controller(name, scenario, eq, models, kernel_n=101):
    L, tau = scenario.length, scenario.tau
    if name == "open_loop":
        return OpenLoop()
    if name == "backstepping":
        return BacksteppingController.from_equilibrium(eq, tau, L, TriangularGrid(kernel_n, L))
    if name == "pi":
        return PIController()
    if name not in MODEL_CONTROLLERS:
        raise UsageError(f"unknown controller {name!r}")
    key = MODEL_CONTROLLERS[name]
    path = models.get(key) or models.get(name) or models.get("default")
    if path is None:
        raise UsageError(f"controller {name} needs --model {key}=PATH")
    model = load_model(path)
    if name == "no_kernel":
        return NOKernelController(model, eq, tau, L, n_xi=kernel_n)
    if name == "pino_kernel":
        return PINOKernelController(model, eq, tau, L, n_xi=kernel_n)
    if name == "pinn_kernel":
        return PINNKernelController(model, eq, tau, L, n_xi=kernel_n)
    return NOControlLaw(model, eq.lambda2)


# ---------------------------------------------------------------- outputs

def write_heatmaps(result, out_dir, stem=""):
    t, x = result.t, result.x
    with open(os.path.join(out_dir, f"{stem}rho.svg"), "w") as fh:
        fh.write(heatmap(result.rho / PER_KM, t, x, f"density ({result.controller})", "veh/km"))
    with open(os.path.join(out_dir, f"{stem}v.svg"), "w") as fh:
        fh.write(heatmap(result.v / KMH, t, x, f"speed ({result.controller})", "km/h"))


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


# ---------------------------------------------------------------- commands

def cmd_simulate(args):
    sc = _scenario(args)
    cfg = sc.sim_config(cfl=args.cfl)
    eq = cfg.eq
    ctrl = build_controller(args.controller, sc, eq, _models(args.model), args.kernel_n)
    res = run_closed_loop(sc.ic, cfg, ctrl)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(args, args.out)
    res.to_csv(os.path.join(args.out, "trajectory.csv"))
    rep = metrics.evaluate(res)
    with open(os.path.join(args.out, "report.csv"), "w") as fh:
        fh.write(rep.to_csv())
    if args.svg:
        write_heatmaps(res, args.out)
    ratio = res.norm[-1] / res.norm[0] if res.norm[0] > 0 else 0.0
    print(f"preset {sc.name}: rho* = {eq.rho_star / PER_KM:.4g} veh/km, v* = {eq.v_star / KMH:.4g} km/h, "
          f"lambda2 = {eq.lambda2 / KMH:.4g} km/h")
    print(f"controller {res.controller}: final/initial deviation = {ratio:.4g}")
    if ratio > 0.5:
        print("persistent oscillation: deviation retained above half of its initial value")
    for w in res.warnings:
        print(f"warning: {w}")
    return 0


def cmd_gen_data(args):
    sc = get_preset(args.preset)
    rng = (args.rho_min, args.rho_max)
    if args.kind == "kernel":
        ds = gen_kernel_dataset(args.n_samples, rng, args.grid_n, args.seed, sc.fd, sc.tau, sc.length,
                                args.sampling, args.jobs)
    else:
        ds = gen_control_dataset(args.n_samples, sc.ic, sc, args.seed, rng, args.n_cells or 500, args.grid_n,
                                 args.jobs)
    ds.save(args.out)
    _echo_config(args, args.out)
    print(f"{args.kind} dataset: {len(ds)} samples ({len(ds.train_idx)} train / {len(ds.test_idx)} test), "
          f"config hash {ds.hash} -> {args.out}")
    return 0


def _train_config(args):
    kw = dict(lr=args.lr, epochs=args.epochs, decay_every=args.decay_every, batch_size=args.batch_size,
              seed=args.seed, p=args.p, points_per_batch=args.points_per_batch, w_data=args.w_data,
              w_physics=args.w_physics)
    if args.width:
        kw["branch_hidden"] = (args.width, args.width)
        kw["trunk_hidden"] = (args.width,) * args.trunk_layers
    return TrainConfig(**kw)


def cmd_train(args):
    cfg = _train_config(args)
    if args.kind == "pinn":
        sc = _scenario(args)
        eq = sc.equilibrium()
        model, hist = train_pinn(PINNProblem.from_equilibrium(eq, sc.tau, sc.length, args.grid_n), cfg)
    else:
        if not args.data:
            raise UsageError("--data is required for this kind")
        if args.kind == "control":
            ds = ControlTrajectoryDataset.load(args.data)
            model, hist = train_control_law(ds, cfg)
        else:
            ds = KernelDataset.load(args.data)
            if args.kind == "no":
                model, hist = train_no(ds, cfg)
            else:
                model, hist = train_pino(ds.half() if args.half else ds, cfg)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    save_model(model, args.out)
    rows = [[k + 1, repr(float(tr)), repr(float(hist.test[k])) if hist.test else "",
             repr(float(hist.physics[k])) if hist.physics else ""] for k, tr in enumerate(hist.train)]
    _write_rows(os.path.splitext(args.out)[0] + "_loss.csv", ["epoch", "train", "test", "physics"], rows)
    print(f"trained {args.kind}: final train loss {hist.train[-1]:.4g}"
          + (f", test loss {hist.test[-1]:.4g}" if hist.test else "") + f" -> {args.out}")
    return 0


def kernel_error_report(model, ds):
    """Held-out max/mean absolute kernel errors in 1/km for a kernel operator."""
    idx = ds.test_idx
    out = model.predict(ds.lambda2[idx], ds.nodes())
    ew = np.abs(out[..., 0] - ds.kw[idx]) * 1000.0
    ev = np.abs(out[..., 1] - ds.kv[idx]) * 1000.0
    return {"max_kw": float(ew.max()), "mean_kw": float(ew.mean()), "max_kv": float(ev.max()),
            "mean_kv": float(ev.mean())}


def cmd_evaluate(args):
    os.makedirs(args.out, exist_ok=True)
    if args.model:
        paths = _models(args.model)
        if not args.data:
            raise UsageError("--data is required with --model")
        ds = KernelDataset.load(args.data)
        rows = []
        for k, p in sorted(paths.items()):
            rep = kernel_error_report(load_model(p), ds)
            rows.append([k, *(repr(rep[c]) for c in ("max_kw", "mean_kw", "max_kv", "mean_kv"))])
            print(f"{k}: max |Kw err| {rep['max_kw']:.4g} 1/km, max |Kv err| {rep['max_kv']:.4g} 1/km")
        _write_rows(os.path.join(args.out, "kernel_errors.csv"),
                    ["model", "max_abs_kw_per_km", "mean_abs_kw_per_km", "max_abs_kv_per_km", "mean_abs_kv_per_km"],
                    rows)
        return 0
    if not args.result:
        raise UsageError("evaluate needs --result or --model")
    eq = _scenario(args).equilibrium()
    res = ScenarioResult.from_csv(args.result, eq)
    res.controller = os.path.basename(os.path.dirname(os.path.abspath(args.result))) or "result"
    base = ScenarioResult.from_csv(args.baseline, eq) if args.baseline else None
    rep = metrics.evaluate(res, base)
    with open(os.path.join(args.out, "report.csv"), "w") as fh:
        fh.write(rep.to_csv())
    print(metrics.render_table([rep]))
    return 0


def cmd_calibrate(args):
    rho_m = args.rho_m * PER_KM if args.rho_m else rho_max_from_geometry(args.lanes, args.vehicle_length,
                                                                        args.safety_factor)
    grid = ingest_grid_csv(args.grid, rho_m)
    fit = fit_three_param(grid, rho_m)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write(fd_config_snippet(fit.fd))
    fd = fit.fd
    print(f"zeta = {fd.zeta / PER_HOUR:.6g} veh/h, kappa = {fd.kappa_fd:.6g}, p = {fd.p_fd:.6g}, "
          f"rho_m = {rho_m / PER_KM:.6g} veh/km, rmse = {fit.rmse:.4g} veh/h")
    if args.rho_star:
        eq = equilibrium_from_density(fd, args.rho_star * PER_KM)
        print(f"v*({args.rho_star:g} veh/km) = {eq.v_star / KMH:.4g} km/h")
    return 0


def _compare_run(task):
    name, sc, models, kernel_n, cfl = task
    cfg = sc.sim_config(cfl=cfl)
    t0 = time.perf_counter()
    ctrl = build_controller(name, sc, cfg.eq, models, kernel_n)
    setup = time.perf_counter() - t0
    return name, run_closed_loop(sc.ic, cfg, ctrl), setup


def cmd_compare(args):
    sc = _scenario(args)
    models = _models(args.model)
    names = ["backstepping", "open_loop", "pi"]
    for ctrl, key in MODEL_CONTROLLERS.items():
        if key in models or ctrl in models:
            names.append(ctrl)
    tasks = [(n, sc, models, args.kernel_n, args.cfl) for n in names]
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            runs = list(ex.map(_compare_run, tasks))
    else:
        runs = [_compare_run(t) for t in tasks]
    results = {n: (r, s) for n, r, s in runs}
    base, base_setup = results["backstepping"]
    eq = base.eq
    os.makedirs(args.out, exist_ok=True)
    _echo_config(args, args.out)

    # timing against a mid-run state on the baseline's grid
    cfg = sc.sim_config(cfl=args.cfl)
    from .arz_sim import make_initial

    state = make_initial(sc.ic, eq, cfg.grid, sc.fd)
    bs_ctrl = build_controller("backstepping", sc, eq, models, args.kernel_n)
    reports, timing = [], {}
    for n in names:
        res, setup = results[n]
        tm = None
        if n not in ("open_loop", "backstepping"):
            ctrl = build_controller(n, sc, eq, models, args.kernel_n)
            tm = metrics.timing_compare(ctrl, bs_ctrl, state, eq, base.n_steps + 1, setup, base_setup,
                                        repetitions=args.repetitions)
            timing[n] = tm
        reports.append(metrics.evaluate(res, base, tm))
        res.to_csv(os.path.join(args.out, f"trajectory_{n}.csv"))
        if args.svg:
            write_heatmaps(res, args.out, f"{n}_")

    with open(os.path.join(args.out, "compare.csv"), "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(metrics.EvaluationReport.header())
        for r in reports:
            w.writerow(r.row())
    _write_rows(os.path.join(args.out, "table_state_errors.csv"),
                ["controller", "max_rel_rho_pct", "mean_rel_rho_pct", "max_abs_rho_vehkm", "max_abs_v_kmh"],
                [[r.controller, f"{100 * r.max_rel_rho:.4f}", f"{100 * r.mean_rel_rho:.4f}",
                  f"{r.max_abs_rho:.6g}", f"{r.max_abs_v:.6g}"] for r in reports if r.controller != "backstepping"])
    bref = reports[0]
    _write_rows(os.path.join(args.out, "table_indices.csv"),
                ["controller", "fuel_change_pct", "discomfort_change_pct", "ttt_change_pct"],
                [[r.controller, *(f"{100 * metrics.relative_change(getattr(r, k), getattr(bref, k)):+.4f}"
                                  for k in ("j_fuel", "j_comfort", "j_ttt"))]
                 for r in reports if r.controller != "backstepping"])
    _write_rows(os.path.join(args.out, "table_timing.csv"),
                ["controller", "seconds_per_eval", "raw_speedup", "amortized_speedup", "mse_rho", "mse_v"],
                [[r.controller, f"{timing[r.controller].seconds_per_eval:.4g}", f"{timing[r.controller].raw_ratio:.4g}",
                  f"{timing[r.controller].amortized_ratio:.4g}", f"{r.mse_rho:.4g}", f"{r.mse_v:.4g}"]
                 for r in reports if r.controller in timing])
    kernel_rows = []
    kf = solve_kernels(eq, sc.tau, sc.length, TriangularGrid(args.kernel_n, sc.length))
    nodes = kf.grid.nodes()
    kw_ref, kv_ref = kf.values()
    for n in ("no_kernel", "pino_kernel", "pinn_kernel"):
        if n not in names:
            continue
        m = load_model(models.get(MODEL_CONTROLLERS[n]) or models[n])
        kw, kv = m.predict_kernels(nodes) if n == "pinn_kernel" else m.predict_kernels(eq.lambda2, nodes)
        ew, ev = np.abs(kw - kw_ref) * 1000, np.abs(kv - kv_ref) * 1000
        kernel_rows.append([n, f"{ew.max():.4g}", f"{ew.mean():.4g}", f"{ev.max():.4g}", f"{ev.mean():.4g}"])
    if kernel_rows:
        _write_rows(os.path.join(args.out, "table_kernel_errors.csv"),
                    ["controller", "max_kw_per_km", "mean_kw_per_km", "max_kv_per_km", "mean_kv_per_km"], kernel_rows)
    print(metrics.render_table(reports))
    return 0


# ---------------------------------------------------------------- parser

def _common(p, preset=True):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="out")
    if preset:
        p.add_argument("--preset", default="paper_4_1", choices=sorted(PRESETS))


def _scenario_opts(p):
    p.add_argument("--n-cells", type=int)
    p.add_argument("--horizon", type=float, help="seconds")
    p.add_argument("--tau", type=float, help="relaxation time [s]")
    p.add_argument("--rho-star", type=float, help="equilibrium density override [veh/km]")
    p.add_argument("--fd-config", help="diagram snippet written by 'calibrate'")
    p.add_argument("--cfl", type=float, default=0.9)
    p.add_argument("--kernel-n", type=int, default=101)


def build_parser():
    ap = argparse.ArgumentParser(prog="stopgo", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario")
    _common(p)
    _scenario_opts(p)
    p.add_argument("--controller", default="backstepping", choices=CONTROLLERS)
    p.add_argument("--model", action="append", help="model file, or kind=path")
    p.add_argument("--svg", action="store_true", help="write density/speed heatmaps")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-data", help="generate a kernel or control dataset")
    _common(p)
    p.add_argument("--kind", choices=("kernel", "control"), default="kernel")
    p.add_argument("--n-samples", type=int, default=200)
    p.add_argument("--grid-n", type=int, default=101)
    p.add_argument("--n-cells", type=int)
    p.add_argument("--rho-min", type=float, default=90.0, help="veh/km")
    p.add_argument("--rho-max", type=float, default=130.0, help="veh/km")
    p.add_argument("--sampling", choices=("rho", "lambda2"), default="rho")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train an operator, PINO, PINN or control-law model")
    _common(p)
    _scenario_opts(p)
    p.add_argument("--kind", choices=("no", "pino", "pinn", "control"), default="no")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--half", action="store_true", help="PINO: use every other training sample")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--decay-every", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=20)
    p.add_argument("--points-per-batch", type=int)
    p.add_argument("--p", type=int, default=32)
    p.add_argument("--width", type=int)
    p.add_argument("--trunk-layers", type=int, default=2)
    p.add_argument("--w-data", type=float, default=1.0)
    p.add_argument("--w-physics", type=float, default=1.0)
    p.add_argument("--grid-n", type=int, default=101)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a trajectory, or kernel errors for models")
    _common(p)
    _scenario_opts(p)
    p.add_argument("--result", help="trajectory CSV")
    p.add_argument("--baseline", help="baseline trajectory CSV")
    p.add_argument("--model", action="append", help="kind=path of kernel models")
    p.add_argument("--data", help="kernel dataset directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("calibrate", help="fit the three-parameter diagram to a grid CSV")
    _common(p, preset=False)
    p.add_argument("--grid", required=True, help="x_index,t_index,density,flow CSV (veh/km, veh/h)")
    p.add_argument("--lanes", type=float, default=6.0)
    p.add_argument("--vehicle-length", type=float, default=5.0)
    p.add_argument("--safety-factor", type=float, default=1.5)
    p.add_argument("--rho-m", type=float, help="jam density override [veh/km]")
    p.add_argument("--rho-star", type=float, help="report v* at this density [veh/km]")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("compare", help="all controllers against backstepping")
    _common(p)
    _scenario_opts(p)
    p.add_argument("--model", action="append", help="kind=path with kind in no, pino, pinn, control")
    p.add_argument("--repetitions", type=int, default=200)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_compare)
    return ap


def parse_args(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = parse_config(args.config)
        except OSError as exc:
            ap.error(f"cannot read config: {exc}")
        sub = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        unknown = [k for k in cfg if k not in known]
        if unknown:
            ap.error(f"unknown config key(s): {', '.join(unknown)}")
        for k, v in cfg.items():
            if known[k].nargs == 0:
                cfg[k] = v.lower() in ("1", "true", "yes", "on")
            elif isinstance(known[k], argparse._AppendAction):
                cfg[k] = [s.strip() for s in v.split(",") if s.strip()]
        sub.set_defaults(**cfg)
        args = ap.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"stopgo: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stopgo: {exc}", file=sys.stderr)
        return 2
    except (ModelFileError, OSError) as exc:
        print(f"stopgo: I/O error: {exc}", file=sys.stderr)
        return 4
    except (StopGoError, ArithmeticError, ValueError) as exc:
        print(f"stopgo: numerical failure: {exc}", file=sys.stderr)
        return 3
