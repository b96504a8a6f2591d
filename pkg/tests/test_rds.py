import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dsvs.dataset import build_rds_training, demonstration_from_trajectory
from dsvs.gmr import GMRModel, fit_gmm
from dsvs.rds import ClockSignal, RDSController, clock_value, rds_velocity
from dsvs.vision import SimConfig, StepContext, baseline_policy, simulate, vs_baseline


def constant_model(out):
    cov = np.eye(6)
    return GMRModel(np.array([1.0]), np.concatenate([np.zeros(3), out])[None], cov[None])


def test_clock_examples():
    c = ClockSignal(3.0, 0.5)
    assert clock_value(c, 0.0) == 1.0
    assert clock_value(c, 3.0) == 1.0
    assert clock_value(c, 1e6) == 0.0
    assert math.isclose(clock_value(c, 3.5), math.exp(-1), rel_tol=1e-15)
    assert clock_value(0.25, 99.0) == 0.25


def test_clock_from_steps():
    assert math.isclose(ClockSignal.from_steps(100, 0.03).t0, 3.0)
    with pytest.raises(ValueError):
        ClockSignal(-1.0)
    with pytest.raises(ValueError):
        ClockSignal(1.0, 0.0)


@given(st.floats(0, 50), st.floats(0, 50))
def test_clock_is_monotone_in_unit_interval(a, b):
    c = ClockSignal(3.0, 0.5)
    lo, hi = sorted((a, b))
    assert 0.0 <= clock_value(c, hi) <= clock_value(c, lo) <= 1.0


def test_zero_gate_is_baseline_bitwise():
    ctrl = RDSController(constant_model(np.array([0.3, -0.2, 0.1])), 1.5, 0.0)
    eps = np.array([0.12, -0.03, 0.4])
    assert np.array_equal(rds_velocity(ctrl, eps, 0.0), vs_baseline(eps, 1.5))


def test_reshaped_law_adds_gated_model_output():
    u = np.array([0.3, -0.2, 0.1])
    ctrl = RDSController(constant_model(u), 1.0, ClockSignal(1.0, 0.5))
    eps = np.array([0.1, 0.0, 0.0])
    assert np.allclose(rds_velocity(ctrl, eps, 0.0), -eps + u)
    assert np.allclose(rds_velocity(ctrl, eps, 1.5), -eps + math.exp(-1) * u)
    # at the origin with h = 1 the velocity is the learned term itself
    assert np.allclose(rds_velocity(ctrl, np.zeros(3), 0.0), u)


def test_model_of_baseline_demos_is_negligible(scene):
    demos = []
    for p in ([0.1, -0.05, 0.8], [-0.08, 0.1, 0.9], [0.05, 0.12, 0.7]):
        tr = simulate(baseline_policy(1.0), scene.camera_at(p), scene,
                      SimConfig(max_steps=99, stop_at_convergence=False))
        d = demonstration_from_trajectory(tr, 0.03, scene.goal.orientation)
        d.v[-1] = -d.eps(scene.L_target_pinv)[-1]
        demos.append(d)
    ts = build_rds_training(demos, 1.0, scene.L_target_pinv)
    model, _ = fit_gmm(ts, 2, seed=0)
    ctrl = RDSController(model, 1.0, 1.0)
    for e in ts.inputs[::17]:
        assert np.linalg.norm(rds_velocity(ctrl, e, 0.0) + e) < 1e-6


def test_controller_dict_round_trip(scene, class_demos):
    ts = build_rds_training(class_demos["jshape"], 1.0, scene.L_target_pinv)
    model, _ = fit_gmm(ts, 5, seed=0)
    for clock in (ClockSignal(2.0, 0.4), 1.0):
        ctrl = RDSController(model, 1.0, clock)
        back = RDSController.from_dict(ctrl.to_dict())
        for t in (0.0, 2.5):
            e = ts.inputs[40]
            assert np.array_equal(rds_velocity(back, e, t), rds_velocity(ctrl, e, t))


def test_controller_validation():
    with pytest.raises(ValueError):
        RDSController(constant_model(np.zeros(3)), 0.0)


def test_policy_reports_gate(scene):
    ctrl = RDSController(constant_model(np.zeros(3)), 1.0, ClockSignal(0.03, 0.5))
    ctx = StepContext(0, 0.06, scene.goal, None, None, np.array([0.01, 0, 0]), None)
    v, info = ctrl(ctx)
    assert math.isclose(info["h"], math.exp(-0.06))


def test_velocity_continuous_along_run(scene, class_demos):
    demos = class_demos["sshape"]
    ts = build_rds_training(demos, 1.0, scene.L_target_pinv)
    model, _ = fit_gmm(ts, 7, seed=0)
    ctrl = RDSController(model, 1.0, ClockSignal(1.5, 0.5))
    tr = simulate(ctrl, scene.camera_at(demos[0].positions[0]), scene)
    n = len(tr) - 1
    dv = np.linalg.norm(np.diff(tr.v[:n], axis=0), axis=1)
    de = np.linalg.norm(np.diff(tr.eps[:n], axis=0), axis=1)
    lip = max(np.linalg.norm(model.jacobian(e), 2) for e in tr.eps[:n]) + 1.0
    # gate change per step is at most T / decay_tau times the model output
    dh = 0.03 / 0.5 * max(np.linalg.norm(model.predict_mean(e)) for e in tr.eps[:n])
    assert np.all(dv <= 2 * lip * de + dh + 1e-9)
