"""Fit the three-parameter diagram to synthetic cells and run the calibrated scenario.

    python3 demos/calibrate_synthetic.py
"""
from stopgo.arz_sim import run_closed_loop
from stopgo.calibration import fit_three_param, rho_max_from_geometry, synthetic_grid
from stopgo.controllers import BacksteppingController
from stopgo.presets import get_preset, ngsim_fd
from stopgo.units import KMH, PER_HOUR, PER_KM

rho_m = rho_max_from_geometry(lanes=6, vehicle_length=5.0, safety_factor=1.5)
truth = ngsim_fd()
grid = synthetic_grid(truth, n=300, noise=0.01, seed=1)
fit = fit_three_param(grid, rho_m)
fd = fit.fd
print(f"rho_m = {rho_m / PER_KM:.0f} veh/km")
print(f"zeta  {fd.zeta / PER_HOUR:9.2f} veh/h  (generator {truth.zeta / PER_HOUR:.2f})")
print(f"kappa {fd.kappa_fd:9.3f}        (generator {truth.kappa_fd:.3f})")
print(f"p     {fd.p_fd:9.4f}        (generator {truth.p_fd:.4f})")
print(f"fit rmse {fit.rmse:.2f} veh/h")

sc = get_preset("ngsim_calibrated").with_(fd=fd)
cfg = sc.sim_config()
print(f"v*(320 veh/km) = {cfg.eq.v_star / KMH:.2f} km/h")
res = run_closed_loop(sc.ic, cfg, BacksteppingController.from_equilibrium(cfg.eq, sc.tau, sc.length))
print(f"backstepping on the calibrated diagram: norm(300 s)/norm(0) = {res.norm[-1] / res.norm[0]:.3g}")
