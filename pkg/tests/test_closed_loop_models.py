"""Closed-loop properties of the trained controllers (shares the session-trained models)."""
import numpy as np
import pytest

from stopgo.metrics import decay_fit, state_errors

pytestmark = pytest.mark.slow


@pytest.mark.xfail(reason="the single-instance network fits its one kernel more closely than either operator",
                   strict=False)
def test_error_ordering_with_slack(bs_run, model_runs):
    mean = {k: state_errors(model_runs[k], bs_run)["mean_rel_rho"] for k in ("no_kernel", "pino_kernel",
                                                                              "pinn_kernel")}
    assert mean["no_kernel"] <= 2 * mean["pino_kernel"]
    assert mean["pino_kernel"] <= 2 * mean["pinn_kernel"]


def test_kernel_controllers_converge(model_runs):
    for k in ("no_kernel", "pino_kernel", "pinn_kernel"):
        r = model_runs[k]
        assert r.norm[-1] < 0.01 * r.norm[0], k


def test_control_law_is_practically_stable(bs_run, model_runs):
    r = model_runs["no_control_law"]
    rel = r.norm / r.norm[0]
    assert rel[-1] < 0.2
    # slower than the kernel-based loop
    assert decay_fit(r.norm, r.t).rate < decay_fit(bs_run.norm, bs_run.t).rate


def test_control_law_residual_oscillation_small(bs_run, model_runs):
    from stopgo.units import KMH, PER_KM

    r = model_runs["no_control_law"]
    late = r.t >= 150.0
    assert np.mean(np.abs(r.rho[late] - bs_run.rho[late])) / PER_KM < 0.6
    assert np.mean(np.abs(r.v[late] - bs_run.v[late])) / KMH < 0.4


def test_control_law_reproduces_training_sample(control_ds, control_model):
    i = control_ds.train_idx[0]
    u0 = control_model.predict_control(control_ds.lambda2[i], np.array([0.0]))[0]
    scale = np.max(np.abs(control_ds.u[i]))
    assert abs(u0 - control_ds.u[i, 0]) <= 0.1 * scale
