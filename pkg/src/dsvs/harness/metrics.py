"""Reproduction metrics between a closed-loop run and a demonstration."""
from __future__ import annotations

import numpy as np


def aligned(values, n):
    """First ``n`` rows of ``values``, padded with its last row if shorter."""
    values = np.asarray(values, dtype=float)
    if len(values) >= n:
        return values[:n]
    return np.vstack([values, np.repeat(values[-1:], n - len(values), axis=0)])


def rms_distance(a, b):
    """Root mean square of the row-wise Euclidean distance, time-aligned to ``b``."""
    b = np.asarray(b, dtype=float)
    d = aligned(a, len(b)) - b
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", d, d))))


def reproduction_metrics(traj, demo, pixels_per_unit=500.0):
    """``p_rms`` in mm, ``v_rms`` in mm/s and ``s_rms`` in pixels."""
    return {
        "p_rms_mm": 1e3 * rms_distance(traj.positions, demo.positions),
        "v_rms_mm_s": 1e3 * rms_distance(traj.v, demo.v),
        "s_rms_px": pixels_per_unit * rms_distance(traj.s, demo.s),
    }


def mean_std(values):
    """Population mean and standard deviation; ``None`` for no values."""
    if len(values) == 0:
        return {"mean": None, "std": None}
    a = np.asarray(values, dtype=float)
    return {"mean": float(a.mean()), "std": float(a.std())}


def lyapunov_violations(traj, rho0, T, tol, slack=2.0):
    """Steps where ``V`` rises by ``slack * rho * T`` or more while ``|e| > tol``.

    Steps where the controller fell back to the classical law are skipped.
    """
    V = traj.info.get("V")
    if V is None or len(V) < 2:
        return 0
    fallback = traj.info.get("fallback", np.zeros_like(V))
    n = len(V) - 1
    # the final record carries no controller output
    valid = np.isfinite(V[1:]) & np.isfinite(V[:-1])
    rho = rho0 * np.linalg.norm(traj.eps[:n], axis=1)
    outside = traj.error_norms[:n] > tol
    rise = np.diff(V) >= slack * rho * T
    return int(np.sum(rise & outside & valid & (fallback[:n] != 1.0)))


def gamma_branch_crossings(traj):
    b = traj.info.get("gamma_branch")
    if b is None:
        return 0
    b = b[np.isfinite(b)]
    return int(np.sum(b[1:] != b[:-1]))
