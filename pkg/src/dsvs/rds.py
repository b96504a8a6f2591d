"""Reshaped visual servoing: ``v = -lam * eps + h(t) * u(eps)``.

``u`` is a GMR model of the reshaping term learned from demonstrations and
``h`` a clock that holds at 1 and then decays, handing control back to the
classical law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gmr import GMRModel
from .vision import vs_baseline


@dataclass(frozen=True)
class ClockSignal:
    """``h = 1`` up to ``t0``, then ``exp(-(t - t0) / decay_tau)``."""

    t0: float = 3.0
    decay_tau: float = 0.5

    def __post_init__(self):
        if self.t0 < 0 or not self.decay_tau > 0:
            raise ValueError("clock needs t0 >= 0 and decay_tau > 0")

    @classmethod
    def from_steps(cls, t0_steps, T, decay_tau=0.5):
        return cls(t0_steps * T, decay_tau)

    def extinction_time(self, level=1e-9):
        """First time at which ``h`` drops below ``level``."""
        return self.t0 + self.decay_tau * math.log(1.0 / level)


def clock_value(clock, t: float) -> float:
    """Gate value at time ``t``; a plain number is a constant gate."""
    if not isinstance(clock, ClockSignal):
        return float(clock)
    if t <= clock.t0:
        return 1.0
    return math.exp(-(t - clock.t0) / clock.decay_tau)


@dataclass(frozen=True)
class RDSController:
    model: GMRModel
    lam: float = 1.0
    clock: ClockSignal | float = ClockSignal()

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.model.in_dim != 3 or self.model.out_dim != 3:
            raise ValueError("reshaping model must map R^3 -> R^3")

    def __call__(self, ctx):
        h = clock_value(self.clock, ctx.t)
        return rds_velocity(self, ctx.eps, ctx.t), {"h": h}

    def to_dict(self):
        if isinstance(self.clock, ClockSignal):
            clock = {"t0": self.clock.t0, "decay_tau": self.clock.decay_tau}
        else:
            clock = {"constant": float(self.clock)}
        return {"model": self.model.to_dict(), "lambda": self.lam, "clock": clock}

    @classmethod
    def from_dict(cls, d):
        c = d["clock"]
        clock = c["constant"] if "constant" in c else ClockSignal(c["t0"], c["decay_tau"])
        return cls(GMRModel.from_dict(d["model"]), d["lambda"], clock)


def rds_velocity(ctrl: RDSController, eps, t: float) -> np.ndarray:
    h = clock_value(ctrl.clock, t)
    if h == 0.0:
        return vs_baseline(eps, ctrl.lam)
    return vs_baseline(eps, ctrl.lam) + h * ctrl.model.predict_mean(eps)
