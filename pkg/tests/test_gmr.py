import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsvs.errors import DegenerateComponent
from dsvs.gmr import GMMConfig, GMRModel, fit_gmm, gmr_predict


def joint_gaussian(rng, n=10_000):
    A = rng.normal(size=(6, 6))
    cov = A @ A.T / 6 + 0.1 * np.eye(6)
    mean = rng.normal(size=6)
    return rng.multivariate_normal(mean, cov, size=n), mean, cov


def test_k1_recovers_sample_moments(rng):
    X, mean, cov = joint_gaussian(rng)
    model, tau = fit_gmm(X, 1, seed=0)
    assert tau >= 0
    scale = np.sqrt(np.diag(cov))
    assert np.all(np.abs(model.means[0] - mean) < 0.05 * scale)
    assert np.allclose(model.covariances[0], cov, atol=0.05 * np.outer(scale, scale).max())
    # one EM update already lands on the sample moments
    assert len(model.log_likelihood) <= 2
    assert np.allclose(model.means[0], X.mean(axis=0), atol=1e-12)


def test_two_separated_clusters(rng):
    a = rng.normal(size=(300, 6)) * 0.1
    b = rng.normal(size=(100, 6)) * 0.1 + 10.0
    model, _ = fit_gmm(np.vstack([a, b]), 2, seed=3)
    order = np.argsort(model.means[:, 0])
    assert np.allclose(model.priors[order], [0.75, 0.25], atol=1e-6)
    H = model.responsibilities(np.vstack([a, b])[:, :3])
    assert np.all(H.max(axis=1) > 1 - 1e-9)


def test_predict_without_cross_covariance_is_constant():
    cov = np.diag([1.0, 2.0, 3.0, 0.5, 0.5, 0.5])
    m = GMRModel(np.array([1.0]), np.array([[1, 2, 3, 4, 5, 6.0]]), cov[None])
    for x in ([0, 0, 0], [10, -3, 2]):
        out, c = gmr_predict(m, x)
        assert np.allclose(out, [4, 5, 6])
        assert np.allclose(c, 0.5 * np.eye(3))


def test_predict_k1_conditional_gaussian(rng):
    A = rng.normal(size=(6, 6))
    cov = A @ A.T + np.eye(6)
    mu = rng.normal(size=6)
    m = GMRModel(np.array([1.0]), mu[None], cov[None])
    x = rng.normal(size=3)
    expect = mu[3:] + cov[3:, :3] @ np.linalg.solve(cov[:3, :3], x - mu[:3])
    assert np.allclose(m.predict(x)[0], expect, atol=1e-12)
    assert np.allclose(m.predict_mean(x), expect, atol=1e-12)


def test_symmetric_components_average_at_origin(rng):
    A = rng.normal(size=(6, 6))
    cov = A @ A.T + np.eye(6)
    mu = rng.normal(size=6)
    m = GMRModel(np.array([0.5, 0.5]), np.array([mu, -mu]), np.array([cov, cov]))
    c1 = mu[3:] + cov[3:, :3] @ np.linalg.solve(cov[:3, :3], -mu[:3])
    c2 = -mu[3:] + cov[3:, :3] @ np.linalg.solve(cov[:3, :3], mu[:3])
    assert np.allclose(m.responsibilities(np.zeros(3)), 0.5)
    assert np.allclose(m.predict_mean(np.zeros(3)), 0.5 * (c1 + c2), atol=1e-12)


def test_log_likelihood_non_decreasing_and_deterministic(scene, class_demos):
    from dsvs.dataset import build_rds_training
    ts = build_rds_training(class_demos["spiral"], 1.0, scene.L_target_pinv)
    m1, _ = fit_gmm(ts, 11, seed=4)
    m2, _ = fit_gmm(ts, 11, seed=4)
    ll = np.array(m1.log_likelihood)
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[:-1]))
    for a in ("priors", "means", "covariances"):
        assert np.array_equal(getattr(m1, a), getattr(m2, a))
    assert abs(m1.priors.sum() - 1) <= 1e-12


def test_covariances_spd_and_round_trip(tmp_path, rng):
    X, _, _ = joint_gaussian(rng, 500)
    m, _ = fit_gmm(X, 3, seed=1)
    assert all(np.linalg.eigvalsh(c)[0] > 0 for c in m.covariances)
    m.save(tmp_path / "m.json")
    back = GMRModel.load(tmp_path / "m.json")
    q = rng.normal(size=(20, 3))
    assert np.array_equal(back.predict_batch(q), m.predict_batch(q))


def test_degenerate_component_raises(rng):
    X = rng.normal(size=(10, 6))
    with pytest.raises(DegenerateComponent):
        fit_gmm(X, 3, seed=0, config=GMMConfig(min_count=5.0))


def test_needs_k_samples():
    with pytest.raises(ValueError):
        fit_gmm(np.zeros((2, 6)), 3)


def test_priors_must_sum_to_one():
    with pytest.raises(ValueError):
        GMRModel(np.array([0.5, 0.4]), np.zeros((2, 6)), np.array([np.eye(6)] * 2))


@pytest.fixture(scope="module")
def fitted(scene, class_demos):
    from dsvs.dataset import build_rds_training
    ts = build_rds_training(class_demos["sshape"], 1.0, scene.L_target_pinv)
    return fit_gmm(ts, 7, seed=0)[0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
def test_responsibilities_sum_to_one(fitted, x):
    assert abs(fitted.responsibilities(np.array(x)).sum() - 1.0) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.4, 0.4), min_size=3, max_size=3),
       st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_prediction_is_lipschitz_locally(fitted, x, d):
    x = np.array(x)
    d = np.array(d)
    if np.linalg.norm(d) < 1e-3:
        return
    d = 1e-6 * d / np.linalg.norm(d)
    J = fitted.jacobian(x)
    bound = np.linalg.norm(J, 2) * 1e-6 * 1.01 + 1e-12
    assert np.linalg.norm(fitted.predict_mean(x + d) - fitted.predict_mean(x)) <= bound


def test_jacobian_matches_finite_differences(fitted, rng):
    for _ in range(20):
        x = rng.uniform(-0.3, 0.3, size=3)
        fd = np.column_stack([(fitted.predict_mean(x + h) - fitted.predict_mean(x - h)) / 2e-6
                              for h in 1e-6 * np.eye(3)])
        J = fitted.jacobian(x)
        assert np.linalg.norm(J - fd) <= 1e-5 * max(1.0, np.linalg.norm(J))
