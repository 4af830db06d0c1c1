"""Learn the lambda2 -> kernel map and close the loop with the learned kernels.

A small run (about two minutes on one core): 100 kernel samples, 300 epochs.
The accuracy is below what the acceptance fixtures reach with 200 samples.

    python3 demos/operator_controller.py
"""
import time

import numpy as np

from stopgo.arz_sim import run_closed_loop
from stopgo.controllers import BacksteppingController, NOKernelController
from stopgo.dataset_gen import gen_kernel_dataset
from stopgo.metrics import state_errors
from stopgo.neural_operator import TrainConfig, train_no
from stopgo.presets import get_preset

ds = gen_kernel_dataset(100, grid_n=51, seed=0)
t0 = time.perf_counter()
model, hist = train_no(ds, TrainConfig(lr=3e-3, epochs=300, decay_every=60, points_per_batch=300))
print(f"trained in {time.perf_counter() - t0:.0f} s, test loss {hist.test[-1]:.3g}")

idx = ds.test_idx
out = model.predict(ds.lambda2[idx], ds.nodes())
err = 1000 * np.abs(out - np.stack((ds.kw[idx], ds.kv[idx]), axis=-1)).max()
print(f"held-out max kernel error {err:.3g} 1/km")

sc = get_preset("paper_4_1")
cfg = sc.sim_config()
bs = run_closed_loop(sc.ic, cfg, BacksteppingController.from_equilibrium(cfg.eq, sc.tau, sc.length))
no = run_closed_loop(sc.ic, cfg, NOKernelController(model, cfg.eq, sc.tau, sc.length))
e = state_errors(no, bs)
print(f"closed-loop density error vs backstepping: max {100 * e['max_rel_rho']:.2f}%, "
      f"mean {100 * e['mean_rel_rho']:.3f}%")
print(f"final deviation ratio: backstepping {bs.norm[-1] / bs.norm[0]:.3g}, operator {no.norm[-1] / no.norm[0]:.3g}")
