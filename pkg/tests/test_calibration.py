import numpy as np
import pytest

from stopgo.calibration import (
    AggregatedGrid,
    fd_config_snippet,
    fit_three_param,
    ingest_grid_csv,
    rho_max_from_geometry,
    synthetic_grid,
    write_grid_csv,
)
from stopgo.cli import _fd_from_config, parse_config
from stopgo.errors import CalibrationError, DataFileError
from stopgo.fundamental_diagram import ThreeParamFD, equilibrium_from_density
from stopgo.presets import ngsim_fd
from stopgo.units import KMH, PER_HOUR, PER_KM


@pytest.mark.parametrize("lanes,length,safety,expected", [(6, 5.0, 1.5, 800.0), (1, 5.0, 1.0, 200.0),
                                                           (3, 4.0, 1.25, 600.0)])
def test_jam_density(lanes, length, safety, expected):
    assert rho_max_from_geometry(lanes, length, safety) / PER_KM == pytest.approx(expected, rel=1e-12)


def test_jam_density_validation():
    with pytest.raises(ValueError):
        rho_max_from_geometry(0, 5.0, 1.5)


def test_ngsim_equilibrium_speed():
    eq = equilibrium_from_density(ngsim_fd(), 320.0 * PER_KM)
    assert eq.v_star / KMH == pytest.approx(22.3, rel=0.02)


@pytest.fixture(scope="module")
def noiseless_fit():
    fd = ngsim_fd()
    return fd, fit_three_param(synthetic_grid(fd, n=200, noise=0.0, seed=3), fd.rho_m)


def test_noiseless_recovery(noiseless_fit):
    fd, fit = noiseless_fit
    assert fit.fd.zeta == pytest.approx(fd.zeta, rel=1e-6)
    assert fit.fd.kappa_fd == pytest.approx(fd.kappa_fd, rel=1e-6)
    assert fit.fd.p_fd == pytest.approx(fd.p_fd, rel=1e-6)


def test_noisy_recovery():
    fd = ngsim_fd()
    fit = fit_three_param(synthetic_grid(fd, n=300, noise=0.01, seed=1), fd.rho_m)
    for k in ("zeta", "kappa_fd", "p_fd"):
        assert getattr(fit.fd, k) == pytest.approx(getattr(fd, k), rel=0.02), k
    assert fit.rmse > 0


def test_fit_properties(noiseless_fit):
    _, fit = noiseless_fit
    assert fit.fd.flow(0.0) == pytest.approx(0.0, abs=1e-12)
    r = np.linspace(0.0, fit.fd.rho_m, 2001)
    assert np.all(np.diff(np.asarray(fit.fd.flow(r)), 2) <= 1e-15)
    assert all(fit.objective <= s + 1e-15 for s in fit.start_objectives)


def test_degenerate_data():
    fd = ngsim_fd()
    g = synthetic_grid(fd, n=100, noise=0.0, span=(0.4, 0.42))
    with pytest.raises(CalibrationError, match="identifiable"):
        fit_three_param(g, fd.rho_m)
    with pytest.raises(CalibrationError, match="at least 50"):
        fit_three_param(synthetic_grid(fd, n=49), fd.rho_m)


def _write(path, text):
    path.write_text(text)
    return path


def test_ingest_units(tmp_path):
    p = _write(tmp_path / "g.csv", "x_index,t_index,density,flow\n0,0,100,1000\n1,0,200,1500\n0,1,300,900\n")
    g = ingest_grid_csv(p)
    assert len(g) == 3
    assert g.density[0] == pytest.approx(0.1) and g.flow[0] == pytest.approx(1000 / 3600)
    assert list(g.x_index) == [0, 1, 0] and list(g.t_index) == [0, 0, 1]


@pytest.mark.parametrize("row,line", [("1,0,abc,100", 3), ("1,0,-5,100", 3), ("1,0,50,-1", 3), ("1,0,900,10", 3),
                                      ("1,0,,10", 3), ("1,0,nan,10", 3)])
def test_ingest_rejects_bad_rows(tmp_path, row, line):
    p = _write(tmp_path / "g.csv", f"x_index,t_index,density,flow\n0,0,100,1000\n{row}\n")
    with pytest.raises(DataFileError, match=f":{line}:"):
        ingest_grid_csv(p, rho_m=0.8)


def test_ingest_missing_column(tmp_path):
    p = _write(tmp_path / "g.csv", "x_index,t_index,density\n0,0,100\n")
    with pytest.raises(DataFileError, match="flow"):
        ingest_grid_csv(p)


def test_grid_round_trip(tmp_path):
    g = synthetic_grid(ngsim_fd(), n=60, seed=2)
    write_grid_csv(g, tmp_path / "g.csv")
    back = ingest_grid_csv(tmp_path / "g.csv")
    assert np.allclose(back.density, g.density, rtol=1e-14) and np.allclose(back.flow, g.flow, rtol=1e-14)
    assert np.array_equal(back.x_index, g.x_index)


def test_grid_validation():
    with pytest.raises(ValueError):
        AggregatedGrid(np.arange(2), np.arange(3), np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        AggregatedGrid(np.arange(2), np.arange(2), np.array([1.0, 0.0]), np.ones(2))


def test_snippet_round_trip(tmp_path):
    fd = ThreeParamFD(zeta=1339.38 * PER_HOUR, kappa_fd=16.53, p_fd=0.28, rho_m=0.8)
    p = _write(tmp_path / "fd.cfg", fd_config_snippet(fd))
    back = _fd_from_config(parse_config(p))
    assert back.zeta == fd.zeta and back.kappa_fd == fd.kappa_fd and back.p_fd == fd.p_fd
    assert back.rho_m == fd.rho_m
