import os
import subprocess
import sys

import numpy as np
import pytest

from dsvs import kernels

compiled = kernels.compiled
python = kernels.python
needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def random_steps(rng, K=40):
    w = rng.uniform(0.05, 0.4, size=K)
    t = rng.normal(size=(K, 3))
    t *= (rng.uniform(0, 0.99, size=K) * w * np.exp(0.5) / np.linalg.norm(t, axis=1))[:, None]
    return rng.uniform(-0.3, 0.3, size=(K, 3)), t, w


def random_gmr(rng, k=6):
    mu_in = rng.normal(size=(k, 3))
    A = rng.normal(size=(k, 3, 3))
    prec = np.einsum("kij,klj->kil", A, A) + np.eye(3)
    return (mu_in, prec, rng.normal(size=(k, 3, 3)), rng.normal(size=(k, 3)),
            rng.normal(size=k))


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


@needs_ext
def test_lwt_kernels_agree(rng):
    for _ in range(20):
        c, t, w = random_steps(rng)
        z = rng.uniform(-0.5, 0.5, size=3)
        assert np.allclose(compiled.lwt_forward(c, t, w, z), python.lwt_forward(c, t, w, z),
                           rtol=1e-13, atol=1e-15)
        y1, J1 = compiled.lwt_forward_jacobian(c, t, w, z)
        y2, J2 = python.lwt_forward_jacobian(c, t, w, z)
        assert np.allclose(y1, y2, rtol=1e-13, atol=1e-15)
        assert np.allclose(J1, J2, rtol=1e-12, atol=1e-14)
        i1, ok1 = compiled.lwt_inverse(c, t, w, y1)
        i2, ok2 = python.lwt_inverse(c, t, w, y1)
        assert ok1 and ok2
        assert np.allclose(i1, i2, atol=1e-13) and np.allclose(i1, z, atol=1e-12)


@needs_ext
def test_gmr_mean_agrees(rng):
    for _ in range(20):
        args = random_gmr(rng)
        x = rng.normal(size=3)
        assert np.allclose(compiled.gmr_mean(x, *args), python.gmr_mean(x, *args),
                           rtol=1e-12, atol=1e-14)


@needs_ext
def test_wsaqf_agrees(rng):
    for _ in range(20):
        A = rng.normal(size=(3, 3, 3))
        P = np.einsum("lij,lkj->lik", A, A) + np.eye(3)
        x = rng.normal(size=3)
        mu = rng.normal(scale=0.3, size=(2, 3))
        V1, g1 = compiled.wsaqf_value_grad(x, P[0], P[1:], mu)
        V2, g2 = python.wsaqf_value_grad(x, P[0], P[1:], mu)
        assert np.isclose(V1, V2, rtol=1e-13) and np.allclose(g1, g2, rtol=1e-12)


def test_empty_map_is_identity_in_both_backends():
    c, t, w = np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    z = np.array([0.1, -0.2, 0.3])
    for mod in filter(None, (compiled, python)):
        assert np.array_equal(mod.lwt_forward(c, t, w, z), z)
        assert np.array_equal(mod.lwt_forward_jacobian(c, t, w, z)[1], np.eye(3))


def test_pure_python_switch():
    env = dict(os.environ, DSVS_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from dsvs import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
