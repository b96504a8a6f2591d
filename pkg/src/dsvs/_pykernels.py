"""Pure-Python/numpy reference kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; selected
by :mod:`dsvs.kernels` when the extension is unavailable.

Locally weighted translation step ``j``::

    phi_j(z) = z + k_j(z) * t_j,   k_j(z) = exp(-|z - c_j|^2 / (2 w_j^2))
"""
import math

import numpy as np


def lwt_forward(centers, translations, widths, z):
    y = np.array(z, dtype=float)
    for c, t, w in zip(centers, translations, widths):
        d = y - c
        y = y + math.exp(-(d @ d) / (2.0 * w * w)) * t
    return y


def lwt_forward_jacobian(centers, translations, widths, z):
    """Image of ``z`` and the Jacobian of the composition at ``z``."""
    y = np.array(z, dtype=float)
    J = np.eye(3)
    for c, t, w in zip(centers, translations, widths):
        d = y - c
        k = math.exp(-(d @ d) / (2.0 * w * w))
        grad_k = (-k / (w * w)) * d
        J = (np.eye(3) + np.outer(t, grad_k)) @ J
        y = y + k * t
    return y, J


def _invert_step(c, t, w, y, tol, max_iter):
    # z = y - a t with a = k(z): safeguarded Newton on the scalar a in [0, 1]
    inv_2w2 = 1.0 / (2.0 * w * w)
    lo, hi = 0.0, 1.0
    d0 = y - c
    a = math.exp(-(d0 @ d0) * inv_2w2)
    g_prev = math.inf
    for it in range(max_iter):
        r = y - a * t - c
        k = math.exp(-(r @ r) * inv_2w2)
        g = a - k
        # stagnation at the rounding floor of g counts as converged
        if g == 0.0 or hi - lo <= tol or (abs(g) < 1e-10 and abs(g) > 0.5 * g_prev):
            return a, True
        g_prev = abs(g)
        if g < 0.0:
            lo = a
        else:
            hi = a
        dg = 1.0 - k * (r @ t) / (w * w)
        a_new = a - g / dg if dg > 0.0 else 0.5 * (lo + hi)
        if not lo <= a_new <= hi:
            a_new = 0.5 * (lo + hi)
        if abs(a_new - a) <= tol:
            return a_new, True
        a = a_new
    return a, False


def lwt_inverse(centers, translations, widths, y, tol=1e-15, max_iter=200):
    """Preimage of ``y``; returns ``(z, ok)`` with ``ok`` False on non-convergence."""
    z = np.array(y, dtype=float)
    for j in range(len(widths) - 1, -1, -1):
        a, ok = _invert_step(centers[j], translations[j], widths[j], z, tol, max_iter)
        if not ok:
            return z, False
        z = z - a * translations[j]
    return z, True


def gmr_mean(x, mu_in, prec, A, b, log_c):
    """Conditional mean of a Gaussian mixture at input ``x``.

    ``log_c`` holds log prior plus log normalizer of each input marginal,
    ``prec`` the marginal precisions, ``A``/``b`` the per-component linear
    regressors.
    """
    d = x - mu_in
    log_w = log_c - 0.5 * np.einsum("ki,kij,kj->k", d, prec, d)
    log_w -= log_w.max()
    w = np.exp(log_w)
    w /= w.sum()
    return w @ (A @ x + b)


def wsaqf_value_grad(eps, P0, P, mu):
    """Value and gradient of ``e'P0 e + sum_l [e'P_l(e - mu_l) > 0] (e'P_l(e - mu_l))^2``."""
    x = np.asarray(eps, dtype=float)
    P0x = P0 @ x
    V = x @ P0x
    grad = 2.0 * P0x
    for Pl, ml in zip(P, mu):
        q = x @ Pl @ (x - ml)
        if q > 0.0:
            V += q * q
            grad += 2.0 * q * (Pl @ (x - ml) + Pl.T @ x)
    return V, grad
