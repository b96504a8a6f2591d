"""Diffeomorphic matching of a straight error path onto a demonstrated one.

A map ``psi`` is composed of locally weighted translations::

    phi_j(z) = z + k_j(z) t_j,   k_j(z) = exp(-|z - c_j|^2 / (2 w_j^2))

Each step is a diffeomorphism when ``|t_j| sup|grad k_j| < 1``, i.e.
``|t_j| < w_j exp(1/2)``. ``psi`` is fitted greedily so that the straight
path towards the origin lands on the averaged demonstration; a controller
then follows the straight path in the latent space.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InverseDiverged, SingularJacobian, Stalled

log = logging.getLogger(__name__)

# sup over z of |grad k| for a unit-width Gaussian kernel
_GRAD_SUP = math.exp(-0.5)
_MARGIN = 0.99


@dataclass(frozen=True)
class LocallyWeightedTranslation:
    center: np.ndarray
    translation: np.ndarray
    width: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3))
        if not self.width > 0:
            raise ValueError("kernel width must be positive")
        if not self.lipschitz() < 1.0:
            raise ValueError(
                f"step is not invertible: |t| sup|grad k| = {self.lipschitz():.4f} >= 1")

    def lipschitz(self):
        return float(np.linalg.norm(self.translation)) * _GRAD_SUP / self.width

    def kernel(self, Z):
        D = np.atleast_2d(Z) - self.center
        return np.exp(-np.einsum("mi,mi->m", D, D) / (2.0 * self.width ** 2))

    def apply(self, Z):
        Z = np.atleast_2d(Z)
        return Z + self.kernel(Z)[:, None] * self.translation


def max_translation(width):
    """Largest translation norm allowed for a kernel of this width."""
    return _MARGIN * width / _GRAD_SUP


@dataclass(frozen=True)
class DiffeoMap:
    """Ordered composition of translation steps; empty means identity."""

    steps: tuple = ()
    # max mismatch after 0, 1, ..., K steps (empty when built by hand)
    residuals: tuple = ()
    centers: np.ndarray = field(init=False, repr=False)
    translations: np.ndarray = field(init=False, repr=False)
    widths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "residuals", tuple(float(r) for r in self.residuals))
        object.__setattr__(self, "centers", np.ascontiguousarray(
            np.array([s.center for s in steps], dtype=float).reshape(-1, 3)))
        object.__setattr__(self, "translations", np.ascontiguousarray(
            np.array([s.translation for s in steps], dtype=float).reshape(-1, 3)))
        object.__setattr__(self, "widths", np.ascontiguousarray(
            np.array([s.width for s in steps], dtype=float)))

    def __len__(self):
        return len(self.steps)

    def apply(self, z):
        return kernels.lwt_forward(self.centers, self.translations, self.widths,
                                   np.asarray(z, dtype=float))

    def apply_batch(self, Z):
        Z = np.array(Z, dtype=float, ndmin=2)
        for step in self.steps:
            Z = step.apply(Z)
        return Z

    def jacobian(self, z):
        return self.apply_and_jacobian(z)[1]

    def apply_and_jacobian(self, z):
        return kernels.lwt_forward_jacobian(self.centers, self.translations, self.widths,
                                            np.asarray(z, dtype=float))

    def inverse(self, eps):
        z, ok = kernels.lwt_inverse(self.centers, self.translations, self.widths,
                                    np.asarray(eps, dtype=float))
        if not ok:
            raise InverseDiverged(f"step inversion did not converge at {eps}")
        return z

    def inverse_batch(self, E):
        return np.array([self.inverse(e) for e in np.atleast_2d(E)])

    def to_dict(self):
        return {"steps": [{"center": s.center.tolist(), "translation": s.translation.tolist(),
                           "width": s.width} for s in self.steps],
                "residuals": list(self.residuals)}

    @classmethod
    def from_dict(cls, d):
        steps = [LocallyWeightedTranslation(s["center"], s["translation"], s["width"])
                 for s in d["steps"]]
        return cls(tuple(steps), tuple(d.get("residuals", ())))


def diffeo_apply(psi: DiffeoMap, z):
    return psi.apply(z)


def diffeo_jacobian(psi: DiffeoMap, z):
    return psi.jacobian(z)


def diffeo_inverse(psi: DiffeoMap, eps):
    return psi.inverse(eps)


# -- fitting ----------------------------------------------------------------

@dataclass
class FDMConfig:
    step_fraction: float = 0.9
    # "search": best of a geometric grid of widths per step; "nearest":
    # width_scale times the distance to the nearest other trajectory point;
    # a number: that fixed width
    width_rule: str | float = "search"
    width_scale: float = 2.0
    n_widths: int = 16
    stop_tol: float = 1e-6
    stall_steps: int = 10
    stall_tol: float = 1e-12
    # halvings of the step tried when a step would raise the max mismatch
    max_backtrack: int = 12


def _nearest_distance(Y, i):
    d = np.linalg.norm(Y - Y[i], axis=1)
    d = d[d > 0]
    return float(d.min()) if d.size else 1.0


def _candidate_widths(Y, i, cfg):
    rule = cfg.width_rule
    if not isinstance(rule, str):
        return np.array([float(rule)])
    d_near = _nearest_distance(Y, i)
    w_near = cfg.width_scale * d_near
    if rule == "nearest":
        return np.array([w_near])
    if rule != "search":
        raise ValueError(f"unknown width rule {rule!r}")
    lo = 0.5 * d_near
    hi = max(float(np.max(np.linalg.norm(Y - Y[i], axis=1))), w_near)
    return np.geomspace(lo, hi, cfg.n_widths)


def _best_step(Y, target, c, delta, widths, fraction, res):
    """Admissible step (max mismatch <= res) with the least squared mismatch,
    or ``None``."""
    t = np.repeat(fraction * delta[None], len(widths), axis=0)
    n = np.linalg.norm(delta) * fraction
    cap = _MARGIN * widths / _GRAD_SUP
    shrink = n > cap
    t[shrink] *= (cap[shrink] / n)[:, None]
    D = Y - c
    K = np.exp(-np.einsum("mi,mi->m", D, D)[None, :] / (2.0 * widths[:, None] ** 2))
    Y_new = Y[None] + K[:, :, None] * t[:, None, :]
    mis = np.linalg.norm(Y_new - target[None], axis=2)
    worst = mis.max(axis=1)
    ok = np.flatnonzero(worst <= res)
    if ok.size == 0:
        return None
    j = ok[np.argmin(np.einsum("km,km->k", mis[ok], mis[ok]))]
    return widths[j], t[j], Y_new[j], float(worst[j])


def fast_diffeo_match(training, K_max: int, config: FDMConfig | None = None):
    """Greedy fit of ``psi`` with ``psi(line_n) ~ demo_n``.

    ``training`` pairs the averaged demonstration (inputs) with the straight
    path (outputs); the straight path is the source. Each step centers a
    kernel on the source image point with the largest mismatch and
    translates it ``step_fraction`` of the way to its target (clipped to the
    invertibility margin). Steps that would raise the max mismatch are shrunk
    by halving, and if no width admits a step the widths are halved, so the
    residual is non-increasing.

    Returns ``(DiffeoMap, training_time_seconds)``; ``DiffeoMap.residuals``
    holds the max mismatch after each step. Raises :class:`Stalled` when the
    residual decreases by less than ``stall_tol`` for ``stall_steps``
    consecutive steps above ``stop_tol``.
    """
    cfg = config or FDMConfig()
    start = time.perf_counter()
    Y = np.array(training.outputs, dtype=float)
    target = np.asarray(training.inputs, dtype=float)
    if Y.shape != target.shape:
        raise ValueError("source and target paths differ in shape")
    mis = np.linalg.norm(Y - target, axis=1)
    res = float(mis.max()) if len(mis) else 0.0
    residuals = [res]
    steps = []
    slow = 0
    while len(steps) < K_max and res >= cfg.stop_tol:
        i = int(np.argmax(mis))
        c = Y[i].copy()
        delta = target[i] - c
        widths = _candidate_widths(Y, i, cfg)
        best = None
        # shrink the step first, then the kernels
        for shrink in range(2 * cfg.max_backtrack + 1):
            fraction = cfg.step_fraction * 0.5 ** min(shrink, cfg.max_backtrack)
            scale = 0.5 ** max(0, shrink - cfg.max_backtrack)
            best = _best_step(Y, target, c, delta, widths * scale, fraction, res)
            if best is not None:
                break
        if best is None:
            raise Stalled(f"no admissible step at residual {res:.3g} after {len(steps)} steps")
        w, t, Y, m_new = best
        steps.append(LocallyWeightedTranslation(c, t, w))
        slow = slow + 1 if res - m_new < cfg.stall_tol else 0
        res = m_new
        residuals.append(res)
        mis = np.linalg.norm(Y - target, axis=1)
        if slow >= cfg.stall_steps and res >= cfg.stop_tol:
            raise Stalled(f"residual stuck at {res:.3g} after {len(steps)} steps")
    elapsed = time.perf_counter() - start
    return DiffeoMap(tuple(steps), tuple(residuals)), elapsed


# -- control ----------------------------------------------------------------

JACOBIAN_MODES = ("preimage", "epsilon")


@dataclass(frozen=True)
class FDMController:
    """Follows the straight latent path through ``psi``.

    ``jacobian_at="preimage"`` maps the latent error ``x = z - z*`` (with
    ``z = psi^-1(eps)`` and ``z* = psi^-1(0)``) forward: ``v = -gamma(x) J(z) x``.
    ``"epsilon"`` evaluates ``v = -gamma(eps) J(eps)^-1 eps`` literally.
    """

    psi: DiffeoMap
    eps1_norm: float
    N: int
    T: float
    jacobian_at: str = "preimage"
    z_star: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.eps1_norm > 0 or self.N < 2 or not self.T > 0:
            raise ValueError("need eps1_norm > 0, N >= 2 and T > 0")
        if self.jacobian_at not in JACOBIAN_MODES:
            raise ValueError(f"jacobian_at must be one of {JACOBIAN_MODES}")
        object.__setattr__(self, "z_star", self.psi.inverse(np.zeros(3)))

    def __call__(self, ctx):
        v, g, branch = _velocity(self, ctx.eps)
        return v, {"gamma": g, "gamma_branch": branch}

    def to_dict(self):
        return {"psi": self.psi.to_dict(), "eps1_norm": self.eps1_norm, "N": self.N,
                "T": self.T, "jacobian_at": self.jacobian_at}

    @classmethod
    def from_dict(cls, d):
        return cls(DiffeoMap.from_dict(d["psi"]), d["eps1_norm"], d["N"], d["T"],
                   d.get("jacobian_at", "preimage"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _gamma_branch(ctrl, x):
    nx = float(np.linalg.norm(x))
    floor = ctrl.eps1_norm / ctrl.N
    if nx >= floor:
        return ctrl.eps1_norm / (ctrl.N * ctrl.T * nx), 1
    return floor, 2


def gamma(ctrl: FDMController, eps) -> float:
    """Variable gain: constant speed ``|eps1| / (N T)`` along the path, then
    the constant ``|eps1| / N`` inside the last path segment."""
    return _gamma_branch(ctrl, eps)[0]


def _checked(J):
    cond = np.linalg.cond(J)
    if not cond <= 1e12:
        raise SingularJacobian(f"Jacobian condition number {cond:.3g}")
    return J


def _velocity(ctrl, eps):
    eps = np.asarray(eps, dtype=float)
    if not np.any(eps):
        return np.zeros(3), _gamma_branch(ctrl, eps)[0], 2
    if ctrl.jacobian_at == "epsilon":
        g, branch = _gamma_branch(ctrl, eps)
        J = _checked(ctrl.psi.jacobian(eps))
        return -g * np.linalg.solve(J, eps), g, branch
    z = ctrl.psi.inverse(eps)
    x = z - ctrl.z_star
    g, branch = _gamma_branch(ctrl, x)
    _, J = ctrl.psi.apply_and_jacobian(z)
    return -g * (_checked(J) @ x), g, branch


def fdm_velocity(ctrl: FDMController, eps) -> np.ndarray:
    return _velocity(ctrl, eps)[0]
