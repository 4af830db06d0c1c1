import warnings

import numpy as np
import pytest

from stopgo.arz_sim import run_closed_loop
from stopgo.controllers import (
    BacksteppingController,
    NOControlLaw,
    NOKernelController,
    PINNKernelController,
    PINOKernelController,
)
from stopgo.dataset_gen import gen_control_dataset, gen_kernel_dataset
from stopgo.neural_operator import (
    PINNProblem,
    TrainConfig,
    train_control_law,
    train_no,
    train_pinn,
    train_pino,
)
from stopgo.presets import demand_fd, get_preset, ngsim_fd

TAU, L = 60.0, 500.0


@pytest.fixture(scope="session")
def base():
    return get_preset("paper_4_1")


@pytest.fixture(scope="session")
def base_eq(base):
    return base.equilibrium()


@pytest.fixture(scope="session")
def small_kernel_ds():
    # coarse grid keeps operator tests fast
    return gen_kernel_dataset(24, grid_n=21, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- trained models (slow, shared)
# desk-scale settings: lr 3e-3 with step decay, random node subsets per step

@pytest.fixture(scope="session")
def kernel_ds():
    return gen_kernel_dataset(200, grid_n=101, seed=0)


@pytest.fixture(scope="session")
def no_model(kernel_ds):
    cfg = TrainConfig(lr=3e-3, epochs=1000, decay_every=200, points_per_batch=500, batch_size=20)
    return train_no(kernel_ds, cfg)[0]


@pytest.fixture(scope="session")
def pino_model(kernel_ds):
    cfg = TrainConfig(lr=3e-3, epochs=1000, decay_every=200, points_per_batch=200, batch_size=20)
    return train_pino(kernel_ds.half(), cfg)[0]


@pytest.fixture(scope="session")
def pinn_problem(base_eq):
    return PINNProblem.from_equilibrium(base_eq, TAU, L, 101)


@pytest.fixture(scope="session")
def pinn_model(pinn_problem):
    cfg = TrainConfig(lr=3e-3, epochs=600, decay_every=120, points_per_batch=500)
    return train_pinn(pinn_problem, cfg)[0]


@pytest.fixture(scope="session")
def control_ds(base):
    return gen_control_dataset(120, scenario=base, n_cells=500, seed=0)


@pytest.fixture(scope="session")
def control_model(control_ds):
    ds = control_ds
    cfg = TrainConfig(lr=3e-3, epochs=2000, decay_every=400, p=64, branch_hidden=(128, 128),
                      trunk_hidden=(128, 128, 128), batch_size=10)
    return train_control_law(ds, cfg)[0]


@pytest.fixture(scope="session")
def family_models():
    """Operators for the presets whose diagram differs from the base one."""
    out = {}
    for key, fd, rho_range in (("demand", demand_fd(), (95.0, 125.0)), ("ngsim", ngsim_fd(), (290.0, 350.0))):
        ds = gen_kernel_dataset(100, rho_range=rho_range, grid_n=51, fd=fd, seed=0)
        cfg = TrainConfig(lr=3e-3, epochs=600, decay_every=120, points_per_batch=300, batch_size=20)
        out[key] = train_no(ds, cfg)[0]
    return out


@pytest.fixture(scope="session")
def bs_run(base, base_eq):
    return run_closed_loop(base.ic, base.sim_config(), BacksteppingController.from_equilibrium(base_eq, TAU, L))


@pytest.fixture(scope="session")
def model_runs(base, base_eq, no_model, pino_model, pinn_model, control_model):
    cfg = base.sim_config()
    ctrls = {
        "no_kernel": NOKernelController(no_model, base_eq, TAU, L),
        "pino_kernel": PINOKernelController(pino_model, base_eq, TAU, L),
        "pinn_kernel": PINNKernelController(pinn_model, base_eq, TAU, L),
        "no_control_law": NOControlLaw(control_model, base_eq.lambda2),
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return {k: run_closed_loop(base.ic, cfg, c) for k, c in ctrls.items()}
