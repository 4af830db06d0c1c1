"""Named scenario presets (SI units internally)."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .arz_sim import Grid1D, InitialCondition, SimConfig
from .fundamental_diagram import (
    GreenshieldsFD,
    ThreeParamFD,
    equilibrium_from_demand,
    equilibrium_from_density,
)
from .units import kmh_to_ms, vehh_to_vehs, vehkm_to_vehm


@dataclass(frozen=True)
class Scenario:
    name: str
    fd: object
    rho_star: float | None = None  # veh/m; either this or q_star
    q_star: float | None = None  # veh/s
    tau: float = 60.0
    length: float = 500.0
    horizon: float = 300.0
    ic: InitialCondition = field(default_factory=InitialCondition)
    n_cells: int = 500

    def equilibrium(self):
        if self.rho_star is not None:
            return equilibrium_from_density(self.fd, self.rho_star)
        return equilibrium_from_demand(self.fd, self.q_star)

    def sim_config(self, n_cells=None, cfl=0.9, horizon=None, **kw):
        grid = Grid1D(self.length, n_cells or self.n_cells)
        return SimConfig(horizon=horizon or self.horizon, tau=self.tau, fd=self.fd, eq=self.equilibrium(),
                         grid=grid, cfl=cfl, **kw)

    def with_(self, **kw):
        return replace(self, **kw)


def reference_fd():
    return GreenshieldsFD(v_f=kmh_to_ms(144.0), rho_m=vehkm_to_vehm(160.0))


def demand_fd():
    # free speed implied by the demand presets' equilibrium pairs
    return GreenshieldsFD(v_f=kmh_to_ms(54.0), rho_m=vehkm_to_vehm(160.0))


def ngsim_fd():
    return ThreeParamFD(zeta=vehh_to_vehs(1339.38), kappa_fd=16.53, p_fd=0.28, rho_m=vehkm_to_vehm(800.0))


def _build():
    base = Scenario("paper_4_1", reference_fd(), rho_star=vehkm_to_vehm(120.0))
    out = {
        "paper_4_1": base,
        # inflow demands; the congested branch gives 100, 110 and 120 veh/km
        "demand_high": Scenario("demand_high", demand_fd(), q_star=vehh_to_vehs(2025.0)),
        "demand_medium": Scenario("demand_medium", demand_fd(), q_star=vehh_to_vehs(1856.25)),
        "demand_low": Scenario("demand_low", demand_fd(), q_star=vehh_to_vehs(1620.0)),
        "nonrecurrent_sin": base.with_(name="nonrecurrent_sin", ic=InitialCondition("sinusoidal_pi", 0.05)),
        "nonrecurrent_linear": base.with_(name="nonrecurrent_linear",
                                          ic=InitialCondition("linear", amplitude=0.05)),
        "ngsim_calibrated": Scenario("ngsim_calibrated", ngsim_fd(), rho_star=vehkm_to_vehm(320.0)),
    }
    return out


PRESETS = _build()


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
