"""Learned dynamics stabilized online by a learned control Lyapunov function.

The Lyapunov candidate is a weighted sum of asymmetric quadratic functions::

    V(e) = e'P0 e + sum_l beta_l(e) * (e'P_l (e - mu_l))^2

with ``beta_l = 1`` when ``e'P_l(e - mu_l) > 0`` and 0 otherwise. All ``P``
matrices are symmetric positive definite through a Cholesky parameterization.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .errors import OptimizationFailed, VanishingGradient
from .gmr import GMRModel
from .vision import vs_baseline

log = logging.getLogger(__name__)

_TRIL = np.tril_indices(3)


@dataclass(frozen=True)
class CLFModel:
    P0: np.ndarray
    P: np.ndarray
    mu: np.ndarray
    violation_fraction: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "P0", np.ascontiguousarray(self.P0, dtype=float))
        object.__setattr__(self, "P", np.ascontiguousarray(
            np.asarray(self.P, dtype=float).reshape(-1, 3, 3)))
        object.__setattr__(self, "mu", np.ascontiguousarray(
            np.asarray(self.mu, dtype=float).reshape(-1, 3)))
        if len(self.P) != len(self.mu):
            raise ValueError("need one center per asymmetric component")
        for M in (self.P0, *self.P):
            if not np.allclose(M, M.T) or np.linalg.eigvalsh(M)[0] <= 0:
                raise ValueError("CLF matrices must be symmetric positive definite")

    @property
    def L(self):
        return len(self.P)

    @classmethod
    def quadratic(cls, P0=None):
        return cls(np.eye(3) if P0 is None else P0, np.zeros((0, 3, 3)), np.zeros((0, 3)))

    def value_and_grad(self, eps):
        return kernels.wsaqf_value_grad(np.asarray(eps, dtype=float), self.P0, self.P,
                                        self.mu)

    def value_and_grad_batch(self, X):
        return _wsaqf_batch(np.atleast_2d(X), self.P0, self.P, self.mu)

    def to_dict(self):
        return {
            "L": self.L,
            "P0_factor": np.linalg.cholesky(self.P0).tolist(),
            "P_factors": [np.linalg.cholesky(p).tolist() for p in self.P],
            "mu": self.mu.tolist(),
            "violation_fraction": self.violation_fraction,
        }

    @classmethod
    def from_dict(cls, d):
        F0 = np.array(d["P0_factor"])
        Fs = [np.array(f) for f in d["P_factors"]]
        P = np.array([f @ f.T for f in Fs]) if Fs else np.zeros((0, 3, 3))
        mu = np.array(d["mu"]) if d["mu"] else np.zeros((0, 3))
        return cls(F0 @ F0.T, P, mu, d.get("violation_fraction"))


def clf_value_and_grad(clf: CLFModel, eps):
    return clf.value_and_grad(eps)


def _wsaqf_batch(X, P0, P, mu):
    V = np.einsum("mi,ij,mj->m", X, P0, X)
    G = 2.0 * X @ P0.T
    for Pl, ml in zip(P, mu):
        Pd = (X - ml) @ Pl.T
        q = np.einsum("mi,mi->m", X, Pd)
        on = q > 0.0
        V = V + np.where(on, q * q, 0.0)
        G = G + np.where(on, 2.0 * q, 0.0)[:, None] * (Pd + X @ Pl)
    return V, G


# -- learning ---------------------------------------------------------------

@dataclass
class CLFConfig:
    components: int = 2
    restarts: int = 5
    margin: float = 1e-4
    # softplus sharpness on the normalized decrease rate
    sharpness: float = 20.0
    # weight of the squared log condition number of every matrix; a nearly
    # flat direction of V makes the online correction blow up
    conditioning: float = 1e-3
    # trace(P) * mean ||eps||^2 / 3; small values keep the correction
    # rho / |grad V| mild near the origin without stalling far from it
    v_scale: float = 0.1
    ceiling: float = 0.25
    max_iter: int = 300


def _spd_from(theta):
    F = np.zeros((3, 3))
    F[_TRIL] = theta
    F[np.diag_indices(3)] = np.exp(np.clip(np.diag(F), -12.0, 12.0))
    return F @ F.T


def _unpack(theta, L):
    P0 = _spd_from(theta[:6])
    P = np.array([_spd_from(theta[6 + 6 * l: 12 + 6 * l]) for l in range(L)]).reshape(L, 3, 3)
    mu = theta[6 + 6 * L:].reshape(L, 3)
    return P0, P, mu


def _factor_params(M):
    F = np.linalg.cholesky(M)
    F[np.diag_indices(3)] = np.log(np.diag(F))
    return F[_TRIL]


def _normalized_rates(X, F, P0, P, mu):
    _, G = _wsaqf_batch(X, P0, P, mu)
    dot = np.einsum("mi,mi->m", G, F)
    return dot / (np.linalg.norm(G, axis=1) * np.linalg.norm(F, axis=1) + 1e-12)


def violation_fraction(clf: CLFModel, inputs, outputs):
    """Share of pairs (with nonzero input) where ``grad V . f >= 0``."""
    X = np.asarray(inputs, dtype=float)
    keep = np.linalg.norm(X, axis=1) > 1e-12
    _, G = clf.value_and_grad_batch(X[keep])
    rates = np.einsum("mi,mi->m", G, np.asarray(outputs)[keep])
    return float(np.mean(rates >= 0.0)) if rates.size else 0.0


def _initial_points(X, L, n, rng):
    scale = np.sqrt(np.mean(np.sum(X * X, axis=1))) or 1.0
    inits = []
    for r in range(n):
        if r == 0:
            P0 = np.eye(3) / scale ** 2
            P = [np.eye(3) * 0.1 / scale ** 2 for _ in range(L)]
            mu = [np.zeros(3) for _ in range(L)]
        else:
            A = rng.normal(size=(3, 3))
            P0 = (A @ A.T + 0.5 * np.eye(3)) / scale ** 2
            P = []
            for _ in range(L):
                B = rng.normal(size=(3, 3))
                P.append((B @ B.T + 0.1 * np.eye(3)) * 0.3 / scale ** 2)
            mu = [X[rng.integers(len(X))] for _ in range(L)]
        theta = np.concatenate([_factor_params(P0)] + [_factor_params(p) for p in P]
                               + [np.ravel(mu)])
        inits.append(theta)
    return inits


def learn_clf(training, L: int | None = None, seed: int = 0, config: CLFConfig | None = None):
    """Fit a WSAQF Lyapunov function to ``(eps, f)`` pairs.

    Minimizes a softplus surrogate of the number of pairs where ``V`` does not
    decrease along the demonstrated velocity (decrease rate normalized by the
    gradient and velocity norms) over ``config.restarts`` seeded starts and
    keeps the start with the lowest violation fraction.

    Returns ``(CLFModel, training_time_seconds)``; the model carries its
    ``violation_fraction``. Raises :class:`OptimizationFailed` if the best
    fraction exceeds ``config.ceiling``.
    """
    cfg = config or CLFConfig()
    if L is None:
        L = cfg.components
    X = np.asarray(training.inputs, dtype=float)
    F = np.asarray(training.outputs, dtype=float)
    if len(X) == 0:
        raise ValueError("empty CLF training set")
    start = time.perf_counter()
    keep = (np.linalg.norm(X, axis=1) > 1e-12) & (np.linalg.norm(F, axis=1) > 0.0)
    Xk, Fk = X[keep], F[keep]
    beta = cfg.sharpness
    # V is scale-free in the surrogate, the decrease demand rho is not
    target_trace = cfg.v_scale * 3.0 / np.mean(np.sum(Xk * Xk, axis=1))

    def objective(theta):
        P0, P, mu = _unpack(theta, L)
        cos = _normalized_rates(Xk, Fk, P0, P, mu)
        z = beta * (cos + cfg.margin)
        loss = np.mean(np.logaddexp(0.0, z)) / beta
        for M in (P0, *P):
            loss += 1e-4 * np.log(np.trace(M) / target_trace) ** 2
            w = np.linalg.eigvalsh(M)
            loss += cfg.conditioning * (np.log(w[-1]) - np.log(max(w[0], 1e-300))) ** 2
        return loss

    rng = np.random.default_rng(seed)
    best = None
    for theta0 in _initial_points(Xk if len(Xk) else X, L, max(1, cfg.restarts), rng):
        res = minimize(objective, theta0, method="L-BFGS-B",
                       options={"maxiter": cfg.max_iter})
        P0, P, mu = _unpack(res.x, L)
        frac = violation_fraction(CLFModel(P0, P, mu), X, F)
        key = (frac, float(res.fun))
        if best is None or key < best[0]:
            best = (key, P0, P, mu)
    elapsed = time.perf_counter() - start
    (frac, _), P0, P, mu = best
    if frac > cfg.ceiling:
        raise OptimizationFailed(
            f"violation fraction {frac:.3f} exceeds ceiling {cfg.ceiling}")
    return CLFModel(P0, P, mu, frac), elapsed


# -- control ----------------------------------------------------------------

@dataclass(frozen=True)
class CLFDMController:
    f_model: GMRModel
    clf: CLFModel
    rho0: float = 0.1
    lam: float = 1.0

    def rho(self, eps):
        return self.rho0 * float(np.linalg.norm(eps))

    def __call__(self, ctx):
        v, fallback = _velocity(self, ctx.eps)
        V, _ = self.clf.value_and_grad(ctx.eps)
        return v, {"V": V, "fallback": float(fallback)}

    def to_dict(self):
        return {"f_model": self.f_model.to_dict(), "clf": self.clf.to_dict(),
                "rho0": self.rho0, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d):
        return cls(GMRModel.from_dict(d["f_model"]), CLFModel.from_dict(d["clf"]),
                   d["rho0"], d["lambda"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def u_clf(ctrl: CLFDMController, eps, f_hat) -> np.ndarray:
    """Stabilizing correction added to ``f_hat``.

    Zero when ``grad V . f_hat <= -rho`` already holds, ``-f_hat`` at the
    origin, otherwise the smallest correction along ``grad V`` that makes
    ``grad V . (f_hat + u) = -rho``.
    """
    eps = np.asarray(eps, dtype=float)
    f_hat = np.asarray(f_hat, dtype=float)
    if not np.any(eps):
        return -f_hat
    _, grad = ctrl.clf.value_and_grad(eps)
    rate = grad @ f_hat
    rho = ctrl.rho(eps)
    if rate <= -rho:
        return np.zeros(3)
    gg = grad @ grad
    if np.sqrt(gg) < 1e-12:
        raise VanishingGradient(f"|grad V| = {np.sqrt(gg):.3g} at eps = {eps}")
    return -((rate + rho) / gg) * grad


def _velocity(ctrl, eps):
    f_hat = ctrl.f_model.predict_mean(eps)
    try:
        return f_hat + u_clf(ctrl, eps, f_hat), False
    except VanishingGradient as exc:
        log.warning("CLF-DM fallback to the classical law: %s", exc)
        return vs_baseline(eps, ctrl.lam), True


def clfdm_velocity(ctrl: CLFDMController, eps) -> np.ndarray:
    return _velocity(ctrl, eps)[0]
