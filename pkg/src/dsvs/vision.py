"""Pinhole camera simulation and image-based visual servoing primitives.

Features are the stacked normalized image coordinates of four points,
``s = (x1, y1, ..., x4, y4)``. Only camera translation is controlled, so the
interaction matrix keeps the three translational columns and velocities are
3-vectors expressed in the camera frame.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import Diverged, NonPositiveDepth, RankDeficientWarning

N_POINTS = 4
N_FEATURES = 2 * N_POINTS

# Camera looking down the world -z axis: world z is camera depth for a
# pattern lying on the z = 0 plane.
LOOK_DOWN = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_length: float = 1.0
    principal_point: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.focal_length > 0:
            raise ValueError("focal_length must be positive")


@dataclass(frozen=True)
class CameraState:
    """Camera pose. ``orientation`` maps camera-frame vectors to world frame."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: LOOK_DOWN.copy())

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        R = np.asarray(self.orientation, dtype=float).reshape(3, 3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("orientation must be a proper rotation matrix")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", R)

    def moved_to(self, position) -> "CameraState":
        # orientation is already validated; only the position changes
        moved = object.__new__(CameraState)
        object.__setattr__(moved, "position", np.asarray(position, dtype=float).reshape(3))
        object.__setattr__(moved, "orientation", self.orientation)
        return moved


@dataclass(frozen=True)
class TargetPattern:
    points: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.shape != (N_POINTS, 3):
            raise ValueError(f"pattern needs {N_POINTS} 3D points, got shape {P.shape}")
        if np.linalg.matrix_rank(P[1:] - P[0], tol=1e-9) < 2:
            raise ValueError("pattern points are collinear")
        object.__setattr__(self, "points", P)

    @classmethod
    def square(cls, side=0.2, center=(0.0, 0.0, 0.0)):
        """Square of the given side in the plane z = center[2]."""
        h = side / 2.0
        offsets = np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])
        return cls(np.asarray(center, dtype=float) + offsets)


def camera_points(camera: CameraState, pattern: TargetPattern) -> np.ndarray:
    """Pattern points expressed in the camera frame, shape (4, 3)."""
    return (pattern.points - camera.position) @ camera.orientation


def project_with_depth(camera, pattern, intrinsics=CameraIntrinsics()):
    """Project the pattern; returns ``(s, depths)``."""
    Pc = camera_points(camera, pattern)
    Z = Pc[:, 2]
    if np.any(Z <= 0.0):
        raise NonPositiveDepth(
            f"pattern point behind the camera (min depth {Z.min():.4g} m)")
    f = intrinsics.focal_length
    cx, cy = intrinsics.principal_point
    xy = np.empty((N_POINTS, 2))
    xy[:, 0] = f * Pc[:, 0] / Z + cx
    xy[:, 1] = f * Pc[:, 1] / Z + cy
    return xy.reshape(N_FEATURES), Z


def project(camera: CameraState, pattern: TargetPattern,
            intrinsics: CameraIntrinsics = CameraIntrinsics()) -> np.ndarray:
    """Stacked image coordinates ``(x1, y1, ..., x4, y4)`` of the pattern."""
    return project_with_depth(camera, pattern, intrinsics)[0]


def back_project(s, depths) -> np.ndarray:
    """Camera-frame points from normalized features and their depths."""
    xy = np.asarray(s, dtype=float).reshape(N_POINTS, 2)
    Z = np.asarray(depths, dtype=float)
    return np.column_stack([xy[:, 0] * Z, xy[:, 1] * Z, Z])


def interaction_matrix(features, depths) -> np.ndarray:
    """Translational interaction matrix of point features, shape (8, 3).

    Row pair ``i`` is ``[-1/Z, 0, x/Z], [0, -1/Z, y/Z]``. Features must be in
    normalized coordinates (unit focal length, zero principal point).
    """
    xy = np.asarray(features, dtype=float).reshape(-1, 2)
    Z = np.asarray(depths, dtype=float).reshape(-1)
    if xy.shape[0] != Z.shape[0]:
        raise ValueError("one depth per feature point is required")
    if np.any(Z <= 0.0):
        raise NonPositiveDepth("interaction matrix needs positive depths")
    inv_z = 1.0 / Z
    L = np.zeros((2 * Z.size, 3))
    L[0::2, 0] = -inv_z
    L[0::2, 2] = xy[:, 0] * inv_z
    L[1::2, 1] = -inv_z
    L[1::2, 2] = xy[:, 1] * inv_z
    return L


def pseudoinverse(L) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below ``max(m, n) * eps * sigma_max`` are dropped. A
    :class:`RankDeficientWarning` is emitted when the rank falls below the
    number of columns.
    """
    L = np.asarray(L, dtype=float)
    m, n = L.shape
    U, sv, Vt = np.linalg.svd(L, full_matrices=False)
    smax = sv[0] if sv.size else 0.0
    cutoff = max(m, n) * np.finfo(float).eps * smax
    keep = sv > cutoff
    rank = int(keep.sum())
    if rank < n:
        warnings.warn(f"interaction matrix rank {rank} < {n}", RankDeficientWarning,
                      stacklevel=2)
    inv_sv = np.zeros_like(sv)
    inv_sv[keep] = 1.0 / sv[keep]
    return (Vt.T * inv_sv) @ U.T


def cartesian_error(L_target_pinv, e) -> np.ndarray:
    return np.asarray(L_target_pinv) @ np.asarray(e)


def vs_baseline(eps, lam: float) -> np.ndarray:
    return -lam * np.asarray(eps, dtype=float)


def integrate_step(camera: CameraState, v, T: float) -> CameraState:
    """Explicit Euler step of the camera position; orientation is unchanged."""
    if not T > 0:
        raise ValueError("T must be positive")
    return camera.moved_to(camera.position + camera.orientation @ np.asarray(v) * T)


@dataclass(frozen=True)
class Scene:
    """Pattern, intrinsics and goal pose, plus the quantities fixed at the goal."""

    pattern: TargetPattern
    goal: CameraState
    intrinsics: CameraIntrinsics = CameraIntrinsics()
    s_star: np.ndarray = field(init=False, repr=False)
    goal_depths: np.ndarray = field(init=False, repr=False)
    L_target: np.ndarray = field(init=False, repr=False)
    L_target_pinv: np.ndarray = field(init=False, repr=False)
    _s_star_n: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s_star, Z = project_with_depth(self.goal, self.pattern, self.intrinsics)
        L = interaction_matrix(self.normalized(s_star), Z)
        object.__setattr__(self, "s_star", s_star)
        object.__setattr__(self, "_s_star_n", self.normalized(s_star))
        object.__setattr__(self, "goal_depths", Z)
        object.__setattr__(self, "L_target", L)
        object.__setattr__(self, "L_target_pinv", pseudoinverse(L))

    def normalized(self, s):
        """Undo focal length and principal point of ``project``."""
        f = self.intrinsics.focal_length
        cx, cy = self.intrinsics.principal_point
        if f == 1.0 and cx == 0.0 and cy == 0.0:
            return np.asarray(s, dtype=float)
        xy = np.asarray(s, dtype=float).reshape(-1, 2)
        return ((xy - [cx, cy]) / f).reshape(np.shape(s))

    def camera_at(self, position) -> CameraState:
        return CameraState(position, self.goal.orientation)

    def observe(self, camera):
        """``(s, e, eps, depths)`` seen from ``camera``."""
        s, Z = project_with_depth(camera, self.pattern, self.intrinsics)
        e = self.normalized(s) - self._s_star_n
        return s, e, self.L_target_pinv @ e, Z

    def to_dict(self):
        return {
            "pattern": self.pattern.points.tolist(),
            "goal_position": self.goal.position.tolist(),
            "goal_orientation": self.goal.orientation.tolist(),
            "focal_length": self.intrinsics.focal_length,
            "principal_point": list(self.intrinsics.principal_point),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            TargetPattern(d["pattern"]),
            CameraState(d["goal_position"], d["goal_orientation"]),
            CameraIntrinsics(d["focal_length"], tuple(d["principal_point"])),
        )


def default_scene(side=0.2, goal_height=0.5) -> Scene:
    """0.2 m square on the floor, goal camera 0.5 m above its center."""
    return Scene(TargetPattern.square(side), CameraState([0.0, 0.0, goal_height]))


class StepContext(NamedTuple):
    """What a controller sees at one control step."""

    step: int
    t: float
    camera: CameraState
    s: np.ndarray
    e: np.ndarray
    eps: np.ndarray
    depths: np.ndarray


@dataclass
class SimConfig:
    T: float = 0.03
    max_steps: int = 1000
    convergence_tol: float = 1e-3
    divergence_bound: float = 10.0
    max_speed: float | None = None
    stop_at_convergence: bool = True


@dataclass
class Trajectory:
    t: np.ndarray
    positions: np.ndarray
    s: np.ndarray
    e: np.ndarray
    eps: np.ndarray
    v: np.ndarray
    info: dict
    converged: bool
    steps_to_converge: int | None

    def __len__(self):
        return len(self.t)

    @property
    def error_norms(self):
        return np.linalg.norm(self.e, axis=1)


Policy = Callable[[StepContext], "np.ndarray | tuple[np.ndarray, dict]"]


def _clamp(v, max_speed):
    if max_speed is None:
        return v
    n = np.linalg.norm(v)
    return v if n <= max_speed else v * (max_speed / n)


def simulate(controller: Policy, init: CameraState, scene: Scene,
             config: SimConfig | None = None) -> Trajectory:
    """Run the closed loop project -> error -> controller -> integrate.

    ``controller`` receives a :class:`StepContext` and returns either a
    velocity or ``(velocity, info)``; scalar entries of ``info`` are stored
    per step in ``Trajectory.info``. Once ``||e|| < convergence_tol`` the
    camera stops (zero command). Raises :class:`Diverged` when ``||e||``
    exceeds ``divergence_bound``.
    """
    cfg = config or SimConfig()
    camera = init
    rec_t, rec_p, rec_s, rec_e, rec_eps, rec_v = [], [], [], [], [], []
    info_rows = []
    converged_at = None

    def build(converged):
        info = {}
        keys = sorted({k for row in info_rows for k in row})
        for k in keys:
            info[k] = np.array([row.get(k, np.nan) for row in info_rows], dtype=float)
        return Trajectory(np.array(rec_t), np.array(rec_p), np.array(rec_s),
                          np.array(rec_e), np.array(rec_eps), np.array(rec_v),
                          info, converged, converged_at)

    for step in range(cfg.max_steps + 1):
        t = step * cfg.T
        s, e, eps, Z = scene.observe(camera)
        err = np.linalg.norm(e)
        rec_t.append(t)
        rec_p.append(camera.position)
        rec_s.append(s)
        rec_e.append(e)
        rec_eps.append(eps)
        if not np.isfinite(err) or err > cfg.divergence_bound:
            rec_v.append(np.full(3, np.nan))
            info_rows.append({})
            raise Diverged(f"||e|| = {err:.4g} exceeded bound at step {step}",
                           build(False))
        if converged_at is None and err < cfg.convergence_tol:
            converged_at = step
        if converged_at is not None and cfg.stop_at_convergence:
            rec_v.append(np.zeros(3))
            info_rows.append({})
            break
        if step == cfg.max_steps:
            rec_v.append(np.zeros(3))
            info_rows.append({})
            break
        out = controller(StepContext(step, t, camera, s, e, eps, Z))
        v, info = out if isinstance(out, tuple) else (out, {})
        v = _clamp(np.asarray(v, dtype=float), cfg.max_speed)
        rec_v.append(v)
        info_rows.append(info)
        camera = integrate_step(camera, v, cfg.T)
    return build(converged_at is not None)


def baseline_policy(lam: float, scene: Scene | None = None, true_matrix=False):
    """Classical law ``v = -lam * L^+ e``.

    With ``true_matrix`` the interaction matrix is rebuilt every step from the
    current features and depths; otherwise the goal approximation stored in the
    scene is used (``ctx.eps``).
    """
    def policy(ctx):
        if true_matrix:
            s_n = scene.normalized(ctx.s) if scene is not None else ctx.s
            L = interaction_matrix(s_n, ctx.depths)
            return vs_baseline(pseudoinverse(L) @ ctx.e, lam)
        return vs_baseline(ctx.eps, lam)
    return policy
