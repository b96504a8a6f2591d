"""Demonstration ingestion, visual augmentation and per-method training sets."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, TooShort, UnequalLengths
from .vision import N_FEATURES, Scene, Trajectory

PLANAR_HEADER = ["t", "x", "y"]
DEMO_HEADER = (["n", "t", "px", "py", "pz"]
               + [f"s{i}" for i in range(1, N_FEATURES + 1)]
               + [f"e{i}" for i in range(1, N_FEATURES + 1)]
               + ["vx", "vy", "vz"])


@dataclass
class PlanarTrajectory:
    t: np.ndarray
    xy: np.ndarray
    velocity: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        if len(self.t) < 2:
            raise TooShort(f"planar trajectory needs >= 2 samples, got {len(self.t)}")
        if len(self.t) != len(self.xy):
            raise ValueError("t and xy lengths differ")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.velocity is None:
            self.velocity = np.gradient(self.xy, self.t, axis=0)
        else:
            self.velocity = np.asarray(self.velocity, dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.t)


@dataclass
class Demonstration:
    """One augmented demonstration sampled every ``T`` seconds.

    ``v`` is the camera-frame velocity commanded at each sample; the last
    sample sits at the goal with zero velocity.
    """

    positions: np.ndarray
    s: np.ndarray
    e: np.ndarray
    v: np.ndarray
    T: float = 0.03
    class_name: str = ""
    index: int = 0
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __len__(self):
        return len(self.positions)

    @property
    def t(self):
        return np.arange(len(self)) * self.T

    def eps(self, L_target_pinv):
        return self.e @ np.asarray(L_target_pinv).T

    def path_length(self):
        return float(np.linalg.norm(np.diff(self.positions, axis=0), axis=1).sum())

    def feature_excursion(self):
        """Largest feature-error norm along the demonstration."""
        return float(np.linalg.norm(self.e, axis=1).max())


@dataclass
class TrainingSet:
    kind: str
    inputs: np.ndarray
    outputs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("RDS", "CLF", "FDM"):
            raise ValueError(f"unknown training-set kind {self.kind!r}")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise ValueError("training pairs must be finite")

    def __len__(self):
        return len(self.inputs)

    def joint(self):
        return np.hstack([self.inputs, self.outputs])


# -- planar ingestion -------------------------------------------------------

def load_planar_trajectories(path) -> list[PlanarTrajectory]:
    """Read demonstrations from a ``t,x,y`` CSV with blank-line-separated blocks.

    A header line may appear at the top of the file or of every block.
    """
    if not os.path.isfile(path):
        raise ParseError(f"{path}: no such file")
    blocks, current = [], []
    saw_row = False
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                if current:
                    blocks.append(current)
                    current = []
                continue
            fields = [f.strip() for f in line.split(",")]
            if fields == PLANAR_HEADER:
                continue
            if len(fields) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
            try:
                current.append([float(f) for f in fields])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
            saw_row = True
    if current:
        blocks.append(current)
    if not saw_row:
        raise ParseError(f"{path}: no samples")
    out = []
    for block in blocks:
        arr = np.array(block)
        out.append(PlanarTrajectory(arr[:, 0], arr[:, 1:3]))
    return out


def write_planar_trajectories(path, trajectories):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i, tr in enumerate(trajectories):
            if i:
                fh.write("\n")
            w.writerow(PLANAR_HEADER)
            for t, (x, y) in zip(tr.t, tr.xy):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])


def fit_to_box(trajectories, size=0.5):
    """Scale a class of planar demos uniformly so its bounding box fits ``size``."""
    allxy = np.vstack([tr.xy for tr in trajectories])
    extent = (allxy.max(axis=0) - allxy.min(axis=0)).max()
    factor = size / extent if extent > 0 else 1.0
    return [PlanarTrajectory(tr.t, tr.xy * factor, tr.velocity * factor)
            for tr in trajectories], factor


def align_to_goal(planar: PlanarTrajectory, goal_xy) -> PlanarTrajectory:
    shift = np.asarray(goal_xy, dtype=float) - planar.xy[-1]
    return PlanarTrajectory(planar.t, planar.xy + shift, planar.velocity)


# -- synthetic handwriting-like classes -------------------------------------

def _approach(tau, rate=4.0):
    """Arc fraction whose remainder decays exponentially, reaching 1 at tau = 1."""
    return (1.0 - np.exp(-rate * tau)) / (1.0 - np.exp(-rate))


def _synthetic_curve(name, u, rng):
    jitter = lambda: 1.0 + rng.uniform(-0.15, 0.15)
    if name == "sshape":
        a, b = 0.25 * jitter(), 1.0 * jitter()
        return np.column_stack([a * np.sin(2.0 * np.pi * u), b * (1.0 - u)])
    if name == "jshape":
        a, b, r = 0.5 * jitter(), 1.0 * jitter(), 0.35 * jitter()
        x = a * 0.5 * (1.0 + np.cos(np.pi * u))
        y = b * (1.0 - u) ** 2 - r * np.sin(np.pi * u)
        return np.column_stack([x, y])
    if name == "spiral":
        r0 = 0.5 * jitter()
        th0 = rng.uniform(-0.3, 0.3)
        r = r0 * (1.0 - u)
        th = th0 + 2.5 * np.pi * u
        return np.column_stack([r * np.cos(th), r * np.sin(th)])
    raise ValueError(f"unknown synthetic class {name!r}")


SYNTHETIC_CLASSES = ("sshape", "jshape", "spiral")


def synthetic_planar(name, n_demos=3, n_samples=1000, duration=3.0, seed=0):
    """Planar demos of one synthetic class, ending at the origin.

    The time law slows down in proportion to the remaining arc, so the last
    stretch of every demo looks like a stable linear system.
    """
    rng = np.random.default_rng([seed, SYNTHETIC_CLASSES.index(name)])
    t = np.linspace(0.0, duration, n_samples)
    u = _approach(t / duration)
    return [PlanarTrajectory(t, _synthetic_curve(name, u, rng)) for _ in range(n_demos)]


# -- augmentation -----------------------------------------------------------

def _forward_velocity(positions, orientation, T):
    v = np.zeros_like(positions)
    v[:-1] = np.diff(positions, axis=0) / T
    # world -> camera frame
    return v @ orientation


def augment(planar: PlanarTrajectory, scene: Scene, z_start=1.0, z_end=None, T=0.03,
            align=True, class_name="", index=0) -> Demonstration:
    """Lift a planar motion into a camera demonstration observing ``scene``.

    The camera follows the planar path in x-y while its height moves linearly
    from ``z_start`` to ``z_end`` (default: goal height) along the path's
    arc length. Orientation is the goal orientation throughout. With ``align``
    the path is translated to end at the goal, so the final error is zero.
    Samples are taken ``T`` seconds apart.
    """
    goal = scene.goal.position
    if z_end is None:
        z_end = goal[2]
    xy = align_to_goal(planar, goal[:2]).xy if align else planar.xy
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    total = seg.sum()
    if total > 0:
        frac = np.concatenate([[0.0], np.cumsum(seg)]) / total
    else:
        frac = np.linspace(0.0, 1.0, len(xy))
    z = z_start + (z_end - z_start) * frac
    positions = np.column_stack([xy, z])
    return _demo_from_positions(positions, scene, T, class_name, index)


def _demo_from_positions(positions, scene, T, class_name="", index=0):
    s = np.empty((len(positions), N_FEATURES))
    e = np.empty_like(s)
    for n, p in enumerate(positions):
        s[n], e[n], _, _ = scene.observe(scene.camera_at(p))
    R = scene.goal.orientation
    return Demonstration(positions, s, e, _forward_velocity(positions, R, T), T,
                         class_name, index, R)


def resample(demo: Demonstration, N: int, scene: Scene | None = None) -> Demonstration:
    """Resample to ``N`` samples by linear interpolation in normalized time.

    Endpoints are kept exactly. Given ``scene``, features are re-projected
    from the interpolated positions; otherwise they are interpolated too.
    Velocities are recomputed from positions with the demo's period.
    """
    if N < 2 or len(demo) < 2:
        raise ValueError("resampling needs N >= 2 and a demo of >= 2 samples")
    if N == len(demo):
        return demo
    src = np.linspace(0.0, 1.0, len(demo))
    dst = np.linspace(0.0, 1.0, N)
    interp = lambda arr: np.column_stack([np.interp(dst, src, col) for col in arr.T])
    positions = interp(demo.positions)
    if scene is not None:
        return _demo_from_positions(positions, scene, demo.T, demo.class_name, demo.index)
    v = _forward_velocity(positions, demo.orientation, demo.T)
    return Demonstration(positions, interp(demo.s), interp(demo.e), v, demo.T,
                         demo.class_name, demo.index, demo.orientation)


def demonstration_from_trajectory(traj: Trajectory, T: float, orientation=None,
                                  class_name="", index=0):
    """Turn a simulated closed-loop run into a demonstration (commanded velocities)."""
    v = traj.v.copy()
    v[-1] = 0.0
    R = np.eye(3) if orientation is None else np.asarray(orientation)
    return Demonstration(traj.positions.copy(), traj.s.copy(), traj.e.copy(), v, T,
                         class_name, index, R)


# -- demonstration CSV ------------------------------------------------------

def write_demonstration(path, demo: Demonstration):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DEMO_HEADER)
        for n in range(len(demo)):
            row = [n, repr(n * demo.T)]
            row += [repr(float(x)) for x in demo.positions[n]]
            row += [repr(float(x)) for x in demo.s[n]]
            row += [repr(float(x)) for x in demo.e[n]]
            row += [repr(float(x)) for x in demo.v[n]]
            w.writerow(row)


def read_demonstration(path, T=0.03, orientation=None, class_name="",
                       index=0) -> Demonstration:
    if not os.path.isfile(path):
        raise ParseError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DEMO_HEADER:
            raise ParseError(f"{path}:1: unexpected header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
    if len(rows) < 2:
        raise TooShort(f"{path}: fewer than 2 samples")
    a = np.array(rows)
    R = np.eye(3) if orientation is None else np.asarray(orientation)
    return Demonstration(a[:, 2:5], a[:, 5:13], a[:, 13:21], a[:, 21:24], T,
                         class_name, index, R)


# -- training sets ----------------------------------------------------------

def build_rds_training(demos, lam, L_target_pinv) -> TrainingSet:
    """Pairs ``(eps, v + lam * eps)``: the reshaping term that explains each sample."""
    eps = np.vstack([d.eps(L_target_pinv) for d in demos])
    v = np.vstack([d.v for d in demos])
    return TrainingSet("RDS", eps, v + lam * eps, {"lambda": lam})


def build_clf_training(demos, L_target_pinv) -> TrainingSet:
    eps = np.vstack([d.eps(L_target_pinv) for d in demos])
    v = np.vstack([d.v for d in demos])
    return TrainingSet("CLF", eps, v.copy())


def build_fdm_training(demos, L_target_pinv) -> TrainingSet:
    """Averaged demo ``eps~_n`` paired with the straight path ``(N-n)/N * eps~_1``.

    ``meta`` carries ``eps1`` (mean initial error) and ``N``.
    """
    lengths = {len(d) for d in demos}
    if len(lengths) != 1:
        raise UnequalLengths(f"demonstrations have lengths {sorted(lengths)}; resample first")
    N = lengths.pop()
    mean_eps = np.mean([d.eps(L_target_pinv) for d in demos], axis=0)
    eps1 = mean_eps[0]
    n = np.arange(1, N + 1)
    linear = ((N - n) / N)[:, None] * eps1
    return TrainingSet("FDM", mean_eps, linear, {"eps1": eps1, "N": N})
