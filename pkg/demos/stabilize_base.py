"""Open loop, PI and backstepping on the base congested scenario.

Prints the deviation norm at a few times and writes density/speed heatmaps
to ``demo_out/``.

    python3 demos/stabilize_base.py
"""
import os

from stopgo.arz_sim import run_closed_loop
from stopgo.cli import write_heatmaps
from stopgo.controllers import BacksteppingController, OpenLoop, PIController
from stopgo.presets import get_preset

out = "demo_out"
os.makedirs(out, exist_ok=True)
sc = get_preset("paper_4_1")
cfg = sc.sim_config()
eq = cfg.eq

controllers = {
    "open_loop": OpenLoop(),
    "pi": PIController(),
    "backstepping": BacksteppingController.from_equilibrium(eq, sc.tau, sc.length),
}
print("controller      norm(t)/norm(0) at t = 50, 100, 150, 300 s")
for name, ctrl in controllers.items():
    res = run_closed_loop(sc.ic, cfg, ctrl)
    rel = [res.norm[abs(res.t - t).argmin()] / res.norm[0] for t in (50, 100, 150, 300)]
    print(f"{name:15s} " + "  ".join(f"{r:9.3g}" for r in rel))
    write_heatmaps(res, out, f"{name}_")
print(f"heatmaps written to {out}/")
