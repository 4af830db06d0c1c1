import logging

import numpy as np
import pytest

import stopgo.dataset_gen as dg
from stopgo.arz_sim import InitialCondition
from stopgo.dataset_gen import (
    ControlTrajectoryDataset,
    KernelDataset,
    gen_control_dataset,
    gen_kernel_dataset,
    lambda2_kmh_interval,
    split_indices,
)
from stopgo.errors import DataFileError, StopGoError
from stopgo.fundamental_diagram import equilibrium_from_density
from stopgo.kernels import TriangularGrid, kernel_residuals, solve_kernels
from stopgo.presets import reference_fd
from stopgo.units import KMH, PER_KM


def test_lambda2_interval():
    lo, hi = lambda2_kmh_interval()
    assert lo == pytest.approx(18.0, rel=1e-12)
    assert hi == pytest.approx(90.0, rel=1e-12)


def test_large_sample_stays_in_interval():
    ds = gen_kernel_dataset(1000, grid_n=3, seed=5)
    lam = ds.lambda2 / KMH
    assert len(ds) == 1000
    assert lam.min() >= 18.0 - 1e-9 and lam.max() <= 90.0 + 1e-9
    assert lam.max() - lam.min() > 0.9 * 72.0


def test_lambda2_linear_in_density():
    ds = gen_kernel_dataset(30, grid_n=3, seed=2)
    coef = np.polyfit(ds.rho_star, ds.lambda2, 1)
    assert np.max(np.abs(np.polyval(coef, ds.rho_star) - ds.lambda2)) < 1e-9
    # lambda2 = 2 v_f rho / rho_m - v_f for this diagram
    fd = reference_fd()
    assert coef[0] == pytest.approx(2 * fd.v_f / fd.rho_m, rel=1e-9)


def test_lambda2_sampling_mode():
    ds = gen_kernel_dataset(200, grid_n=3, seed=3, sampling="lambda2")
    lam = ds.lambda2 / KMH
    assert 18.0 - 1e-9 <= lam.min() and lam.max() <= 90.0 + 1e-9
    with pytest.raises(ValueError):
        gen_kernel_dataset(2, grid_n=3, sampling="other")


def test_split_nine_to_one_and_disjoint():
    tr, te = split_indices(100, 7)
    assert len(tr) == 90 and len(te) == 10
    assert not set(tr) & set(te)
    assert sorted(np.concatenate((tr, te))) == list(range(100))
    a, b = split_indices(100, 7)
    assert np.array_equal(tr, a) and np.array_equal(te, b)


def test_samples_match_solver_and_residual_bound():
    ds = gen_kernel_dataset(5, grid_n=41, seed=4)
    for i in range(len(ds)):
        eq = equilibrium_from_density(reference_fd(), ds.rho_star[i])
        kf = solve_kernels(eq, ds.tau, ds.length, TriangularGrid(41, ds.length))
        kw, kv = kf.values()
        assert np.array_equal(kw, ds.kw[i]) and np.array_equal(kv, ds.kv[i])
        s = kernel_residuals(kf).summary()
        assert s["kappa1"]["max"] < 1e-7 and s["kappa3"]["max"] == 0.0


def test_config_hash_recorded(tmp_path):
    ds = gen_kernel_dataset(4, grid_n=5, seed=1)
    ds.save(tmp_path)
    lines = (tmp_path / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 4
    import json

    recs = [json.loads(x) for x in lines]
    assert {r["config_hash"] for r in recs} == {ds.hash}
    assert {r["split"] for r in recs} <= {"train", "test"}
    other = gen_kernel_dataset(4, grid_n=5, seed=2)
    assert other.hash != ds.hash


def test_save_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        gen_kernel_dataset(2, grid_n=5, seed=9).save(tmp_path / d)
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_kernel_round_trip(tmp_path):
    ds = gen_kernel_dataset(6, grid_n=7, seed=1)
    ds.save(tmp_path)
    back = KernelDataset.load(tmp_path)
    assert np.array_equal(back.kw, ds.kw) and np.array_equal(back.lambda2, ds.lambda2)
    assert np.array_equal(back.train_idx, ds.train_idx) and back.hash == ds.hash


def test_load_rejects_grid_mismatch(tmp_path):
    ds = gen_kernel_dataset(2, grid_n=5, seed=1)
    ds.save(tmp_path)
    p = tmp_path / "samples" / "kernel_00000.csv"
    p.write_text("\n".join(p.read_text().splitlines()[:-2]) + "\n")
    with pytest.raises(DataFileError):
        KernelDataset.load(tmp_path)
    with pytest.raises(DataFileError):
        ControlTrajectoryDataset.load(tmp_path)


def test_half_keeps_test_split():
    ds = gen_kernel_dataset(40, grid_n=3, seed=1)
    h = ds.half()
    assert np.array_equal(h.test_idx, ds.test_idx)
    assert len(h.train_idx) == (len(ds.train_idx) + 1) // 2
    assert set(h.train_idx) <= set(ds.train_idx)


def test_failed_sample_skipped_and_logged(monkeypatch, caplog):
    real = dg._solve_one
    calls = []

    def flaky(args):
        calls.append(args)
        if len(calls) == 2:
            return None, None, None, "synthetic failure"
        return real(args)

    monkeypatch.setattr(dg, "_solve_one", flaky)
    with caplog.at_level(logging.WARNING, logger="stopgo.dataset_gen"):
        ds = gen_kernel_dataset(5, grid_n=5, seed=0)
    assert len(ds) == 4 and ds.config["skipped"] == 1
    assert "synthetic failure" in caplog.text


def test_all_failures_raise(monkeypatch):
    monkeypatch.setattr(dg, "_solve_one", lambda args: (None, None, None, "nope"))
    with pytest.raises(StopGoError):
        gen_kernel_dataset(3, grid_n=5)


def test_rejects_free_flow_range():
    with pytest.raises(ValueError):
        gen_kernel_dataset(3, rho_range=(50.0, 100.0), grid_n=5)
    with pytest.raises(ValueError):
        gen_kernel_dataset(0)


@pytest.fixture(scope="module")
def control_ds():
    return gen_control_dataset(3, seed=0, n_cells=100, kernel_n=41)


def test_control_decays_at_horizon(control_ds):
    u = control_ds.u
    assert np.all(np.abs(u[:, -1]) < 1e-3 * np.max(np.abs(u), axis=1))
    assert control_ds.t[-1] == 300.0 and u.shape == (3, len(control_ds.t))


def test_control_round_trip(control_ds, tmp_path):
    control_ds.save(tmp_path)
    back = ControlTrajectoryDataset.load(tmp_path)
    assert np.array_equal(back.u, control_ds.u) and np.array_equal(back.t, control_ds.t)
    assert back.ic_kind == "sinusoidal_3pi"


def test_control_equilibrium_ic_is_zero():
    ds = gen_control_dataset(2, ic_kind=InitialCondition("constant_equilibrium"), n_cells=50, kernel_n=21)
    assert np.all(ds.u == 0.0)


def test_control_depends_only_on_lambda2():
    base = dg.Scenario("x", reference_fd(), rho_star=110.0 * PER_KM)
    a = dg._control_run((base, 50, 21))
    b = dg._control_run((base.with_(name="y"), 50, 21))
    assert np.array_equal(a[2], b[2])
