"""Gaussian mixture model fitting (EM) and Gaussian mixture regression.

The mixture is fitted on joint vectors ``[input, output]``; regression
conditions each component on the input and blends the conditional means by
the input-marginal responsibilities.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import kernels
from .errors import DegenerateComponent, InsufficientData

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GMMConfig:
    max_iter: int = 500
    tol: float = 1e-8
    # relative to the mean per-dimension variance of the data
    reg: float = 1e-6
    # components whose effective sample count drops below this are degenerate
    min_count: float = 1.0


@dataclass(frozen=True)
class GMRModel:
    """Fitted mixture over ``[input (in_dim), output]`` vectors. Immutable."""

    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    in_dim: int = 3
    seed: int | None = None
    log_likelihood: tuple = ()

    # conditional-regression cache, filled in __post_init__
    mu_in: np.ndarray = field(init=False, repr=False)
    prec_in: np.ndarray = field(init=False, repr=False)
    A: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)
    log_c: np.ndarray = field(init=False, repr=False)
    cond_cov: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pri = np.ascontiguousarray(self.priors, dtype=float)
        mu = np.ascontiguousarray(self.means, dtype=float)
        cov = np.ascontiguousarray(self.covariances, dtype=float)
        if pri.ndim != 1 or mu.shape[0] != pri.size or cov.shape[0] != pri.size:
            raise ValueError("priors, means and covariances disagree on k")
        if abs(pri.sum() - 1.0) > 1e-12:
            raise ValueError(f"priors sum to {pri.sum()!r}, expected 1")
        d = self.in_dim
        S_ii = cov[:, :d, :d]
        S_oi = cov[:, d:, :d]
        S_io = cov[:, :d, d:]
        S_oo = cov[:, d:, d:]
        prec = np.linalg.inv(S_ii)
        prec = 0.5 * (prec + np.transpose(prec, (0, 2, 1)))
        A = S_oi @ prec
        b = mu[:, d:] - np.einsum("kij,kj->ki", A, mu[:, :d])
        _, logdet = np.linalg.slogdet(S_ii)
        log_c = np.log(pri) - 0.5 * (d * LOG_2PI + logdet)
        for name, value in (("priors", pri), ("means", mu), ("covariances", cov),
                            ("mu_in", np.ascontiguousarray(mu[:, :d])),
                            ("prec_in", np.ascontiguousarray(prec)),
                            ("A", np.ascontiguousarray(A)),
                            ("b", np.ascontiguousarray(b)),
                            ("log_c", np.ascontiguousarray(log_c)),
                            ("cond_cov", S_oo - A @ S_io)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "log_likelihood", tuple(self.log_likelihood))

    @property
    def k(self):
        return self.priors.size

    @property
    def out_dim(self):
        return self.means.shape[1] - self.in_dim

    def responsibilities(self, X):
        """Input-marginal responsibilities, shape (M, k) for (M, in_dim) input."""
        X = np.atleast_2d(X)
        D = X[:, None, :] - self.mu_in[None]
        log_w = self.log_c - 0.5 * np.einsum("mki,kij,mkj->mk", D, self.prec_in, D)
        return np.exp(log_w - logsumexp(log_w, axis=1, keepdims=True))

    def predict(self, x):
        """Conditional mean and covariance of the output at one input."""
        x = np.asarray(x, dtype=float)
        h = self.responsibilities(x)[0]
        means = np.einsum("kij,j->ki", self.A, x) + self.b
        out = h @ means
        dev = means - out
        cov = np.einsum("k,kij->ij", h, self.cond_cov) + np.einsum("k,ki,kj->ij", h, dev, dev)
        return out, cov

    def predict_mean(self, x):
        """Conditional mean only (compiled fast path)."""
        return kernels.gmr_mean(np.asarray(x, dtype=float), self.mu_in, self.prec_in,
                                self.A, self.b, self.log_c)

    def predict_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        H = self.responsibilities(X)
        means = np.einsum("kij,mj->mki", self.A, X) + self.b[None]
        return np.einsum("mk,mki->mi", H, means)

    def jacobian(self, x):
        """Analytic derivative of the conditional mean w.r.t. the input."""
        x = np.asarray(x, dtype=float)
        h = self.responsibilities(x)[0]
        means = np.einsum("kij,j->ki", self.A, x) + self.b
        out = h @ means
        g = -np.einsum("kij,kj->ki", self.prec_in, x - self.mu_in)
        grad_h = h[:, None] * (g - h @ g)
        return np.einsum("k,kij->ij", h, self.A) + (means - out).T @ grad_h

    def to_dict(self):
        return {
            "k": self.k,
            "in_dim": self.in_dim,
            "seed": self.seed,
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "covariances": [c.reshape(-1).tolist() for c in self.covariances],
        }

    @classmethod
    def from_dict(cls, d):
        D = len(d["means"][0])
        covs = np.array(d["covariances"], dtype=float).reshape(d["k"], D, D)
        return cls(np.array(d["priors"]), np.array(d["means"]), covs,
                   in_dim=d["in_dim"], seed=d.get("seed"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _kmeans_pp(X, k, rng):
    """k-means++ seeding on standardized data; returns hard labels."""
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    Z = X / scale
    centers = [Z[rng.integers(len(Z))]]
    d2 = ((Z - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(len(Z))
        else:
            idx = rng.choice(len(Z), p=d2 / total)
        centers.append(Z[idx])
        d2 = np.minimum(d2, ((Z - Z[idx]) ** 2).sum(axis=1))
    C = np.array(centers)
    return np.argmin(((Z[:, None, :] - C[None]) ** 2).sum(axis=2), axis=1)


def _log_component_densities(X, means, covs):
    M, D = X.shape
    out = np.empty((M, means.shape[0]))
    for i in range(means.shape[0]):
        Lc = np.linalg.cholesky(covs[i])
        sol = solve_triangular(Lc, (X - means[i]).T, lower=True)
        out[:, i] = (-0.5 * (sol ** 2).sum(axis=0) - np.log(np.diag(Lc)).sum()
                     - 0.5 * D * LOG_2PI)
    return out


def _m_step(X, R, penalty):
    M, D = X.shape
    Nk = R.sum(axis=0)
    priors = Nk / M
    means = (R.T @ X) / Nk[:, None]
    covs = np.empty((len(Nk), D, D))
    for i in range(len(Nk)):
        Xc = X - means[i]
        S = (R[:, i, None] * Xc).T @ Xc
        C = (S + penalty * np.eye(D)) / Nk[i]
        covs[i] = 0.5 * (C + C.T)
    return priors, means, covs, Nk


def _em(X, k, rng, cfg, penalty):
    labels = _kmeans_pp(X, k, rng)
    R = np.zeros((len(X), k))
    R[np.arange(len(X)), labels] = 1.0
    history = []
    for it in range(cfg.max_iter):
        priors, means, covs, Nk = _m_step(X, R, penalty)
        if np.any(Nk < cfg.min_count):
            return None, history
        log_p = _log_component_densities(X, means, covs) + np.log(priors)
        norm = logsumexp(log_p, axis=1)
        # penalized log-likelihood: the quantity EM provably does not decrease
        objective = norm.sum() - 0.5 * penalty * sum(
            np.trace(np.linalg.inv(c)) for c in covs)
        history.append(float(objective))
        R = np.exp(log_p - norm[:, None])
        if it > 0 and abs(history[-1] - history[-2]) <= cfg.tol * abs(history[-2]):
            break
    return (priors, means, covs), history


def fit_gmm(data, k: int, seed: int = 0, config: GMMConfig | None = None, in_dim: int = 3):
    """Fit a full-covariance GMM by EM.

    Parameters
    ----------
    data : TrainingSet or ndarray
        Training pairs, or an (M, D) array of joint vectors whose first
        ``in_dim`` columns are inputs.
    k : int
        Number of components.
    seed : int
        Seed of the k-means++ initialization. A collapsed component triggers a
        single restart with ``seed + 1``.

    Returns
    -------
    (GMRModel, float)
        The model (``log_likelihood`` holds the per-iteration penalized
        log-likelihood) and the wall-clock training time in seconds.
    """
    cfg = config or GMMConfig()
    if hasattr(data, "joint"):
        in_dim = data.inputs.shape[1]
        X = data.joint()
    else:
        X = np.asarray(data, dtype=float)
    if k < 1 or len(X) < k:
        raise InsufficientData(f"need at least k={k} >= 1 samples, got {len(X)}")
    start = time.perf_counter()
    var_scale = np.trace(np.cov(X.T, bias=True).reshape(X.shape[1], X.shape[1])) / X.shape[1]
    penalty = cfg.reg * var_scale * len(X) / k
    for attempt in range(2):
        params, history = _em(X, k, np.random.default_rng(seed + attempt), cfg, penalty)
        if params is not None:
            break
    else:
        raise DegenerateComponent(
            f"a component collapsed below {cfg.min_count} effective samples after reseeding")
    elapsed = time.perf_counter() - start
    priors, means, covs = params
    priors = priors / priors.sum()
    return GMRModel(priors, means, covs, in_dim=in_dim, seed=seed,
                    log_likelihood=history), elapsed


def gmr_predict(model: GMRModel, eps):
    """``(output, covariance)`` of the regression at ``eps``."""
    return model.predict(eps)
