"""Dataset generation, training, closed-loop evaluation and reporting.

Everything lives under ``out_dir``::

    dataset/manifest.json, dataset/<class>/demo_<i>.csv
    models/<method>_k<k>/<class>.json, models/<method>_k<k>/timing.json
    reports/<method>_k<k>.json, reports/<method>_k<k>.timing.json
    trajectories/<method>_k<k>/<class>_<demo|perturbed>_<i>.csv
    table.csv, table.md

Reports are deterministic given the config; wall-clock training times go to
the separate ``.timing.json`` files.
"""
from __future__ import annotations

import csv
import glob
import json
import logging
import os

import numpy as np

from ..clfdm import CLFConfig, CLFDMController, learn_clf, violation_fraction
from ..dataset import (SYNTHETIC_CLASSES, augment, build_clf_training, build_fdm_training,
                       build_rds_training, demonstration_from_trajectory, fit_to_box,
                       load_planar_trajectories, read_demonstration, resample,
                       synthetic_planar, write_demonstration)
from ..errors import (DSVSError, Diverged, NoReports, ParseError)
from ..fdm import FDMConfig, FDMController, fast_diffeo_match
from ..gmr import GMMConfig, fit_gmm
from ..rds import ClockSignal, RDSController
from ..vision import N_FEATURES, Scene, SimConfig, baseline_policy, default_scene, simulate
from . import metrics
from .config import METHODS, ExperimentConfig

log = logging.getLogger(__name__)

TRAJECTORY_HEADER = (["step", "t", "px", "py", "pz"]
                     + [f"s{i}" for i in range(1, N_FEATURES + 1)]
                     + [f"e{i}" for i in range(1, N_FEATURES + 1)]
                     + ["vx", "vy", "vz", "h", "V", "gamma"])
METRIC_KEYS = ("p_rms_mm", "v_rms_mm_s", "s_rms_px")


def _dump(path, obj):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _load(path):
    with open(path) as fh:
        return json.load(fh)


def run_name(method, k):
    return f"{method}_k{int(k)}"


def sim_config(cfg: ExperimentConfig) -> SimConfig:
    c = cfg["control"]
    return SimConfig(T=float(c["T"]), max_steps=int(c["max_steps"]),
                     convergence_tol=float(c["convergence_tol"]),
                     divergence_bound=float(c["divergence_bound"]),
                     max_speed=c["max_speed"])


# -- dataset ----------------------------------------------------------------

def _planar_classes(cfg):
    d = cfg["dataset"]
    if d["source"] == "path":
        root = d["path"]
        if not os.path.isdir(root):
            raise ParseError(f"{root}: input directory not found")
        files = sorted(glob.glob(os.path.join(root, "*.csv")))
        if not files:
            raise ParseError(f"{root}: no planar CSV files")
        return [(os.path.splitext(os.path.basename(f))[0], load_planar_trajectories(f))
                for f in files]
    return [(name, synthetic_planar(name, int(d["demos_per_class"]), int(d["raw_samples"]),
                                    float(d["duration"]), int(d["seed"])))
            for name in d["classes"]]


def generate_dataset(cfg: ExperimentConfig):
    """Write augmented demonstrations and a manifest; returns the manifest path.

    ``synthetic`` and ``path`` sources scale each class into the configured box,
    lift it to a camera motion and resample to ``n_samples``. The ``baseline``
    source instead records the classical law run from the synthetic demo starts.
    """
    d = cfg["dataset"]
    scene = default_scene(**cfg["scene"])
    T, N = cfg.T, int(d["n_samples"])
    if d["source"] != "path":
        for name in d["classes"]:
            if name not in SYNTHETIC_CLASSES:
                raise ParseError(f"unknown synthetic class {name!r}")
    root = os.path.join(cfg.out_dir, "dataset")
    manifest = {"source": d["source"], "T": T, "n_samples": N, "scene": scene.to_dict(),
                "classes": {}}
    for name, planar in _planar_classes(cfg):
        planar, factor = fit_to_box(planar, float(d["box_size"]))
        demos = [resample(augment(p, scene, float(d["z_start"]), T=T, class_name=name,
                                  index=i), N, scene)
                 for i, p in enumerate(planar)]
        if d["source"] == "baseline":
            run = SimConfig(T=T, max_steps=N - 1, divergence_bound=np.inf,
                            stop_at_convergence=False)
            policy = baseline_policy(cfg.lam)
            demos = [demonstration_from_trajectory(
                simulate(policy, scene.camera_at(dm.positions[0]), scene, run), T,
                scene.goal.orientation, name, i) for i, dm in enumerate(demos)]
        files = []
        os.makedirs(os.path.join(root, name), exist_ok=True)
        for i, demo in enumerate(demos):
            rel = f"{name}/demo_{i}.csv"
            write_demonstration(os.path.join(root, rel), demo)
            files.append(rel)
        manifest["classes"][name] = {"scale_factor": factor, "files": files}
    path = os.path.join(root, "manifest.json")
    _dump(path, manifest)
    return path


def load_dataset(cfg: ExperimentConfig):
    """``(scene, {class: [Demonstration]})`` from the generated dataset."""
    root = os.path.join(cfg.out_dir, "dataset")
    path = os.path.join(root, "manifest.json")
    if not os.path.isfile(path):
        raise ParseError(f"{path}: dataset not generated")
    manifest = _load(path)
    scene = Scene.from_dict(manifest["scene"])
    classes = {}
    for name in sorted(manifest["classes"]):
        files = manifest["classes"][name]["files"]
        classes[name] = [read_demonstration(os.path.join(root, f), manifest["T"],
                                            scene.goal.orientation, name, i)
                         for i, f in enumerate(files)]
    return scene, classes


# -- training ---------------------------------------------------------------

def _gmm_config(cfg):
    return GMMConfig(**cfg["train"]["gmm"])


def fit_controller(method, k, demos, scene, cfg: ExperimentConfig):
    """Fit one controller on one class; returns ``(controller, seconds)``."""
    seed = int(cfg["train"]["seed"])
    Lp = scene.L_target_pinv
    if method == "baseline":
        return {"lambda": cfg.lam}, 0.0
    if method == "rds":
        model, tau = fit_gmm(build_rds_training(demos, cfg.lam, Lp), int(k), seed,
                             _gmm_config(cfg))
        r = cfg["rds"]
        if r["h_constant"] is not None:
            clock = float(r["h_constant"])
        else:
            clock = ClockSignal.from_steps(r["clock"]["t0_steps"], cfg.T,
                                           r["clock"]["decay_tau"])
        return RDSController(model, cfg.lam, clock), tau
    if method == "clfdm":
        training = build_clf_training(demos, Lp)
        model, tau_f = fit_gmm(training, int(k), seed, _gmm_config(cfg))
        clf_cfg = CLFConfig(**cfg["train"]["clf"])
        clf, tau_v = learn_clf(training, clf_cfg.components, seed, clf_cfg)
        return CLFDMController(model, clf, cfg.rho0, cfg.lam), tau_f + tau_v
    if method == "fdm":
        training = build_fdm_training(demos, Lp)
        psi, tau = fast_diffeo_match(training, int(k), FDMConfig(**cfg["train"]["fdm"]))
        ctrl = FDMController(psi, float(np.linalg.norm(training.meta["eps1"])),
                             int(training.meta["N"]), cfg.T, cfg["fdm"]["jacobian_at"])
        return ctrl, tau
    raise ValueError(f"unknown method {method!r}")


_LOADERS = {"rds": RDSController, "clfdm": CLFDMController, "fdm": FDMController}


def _controller_dict(ctrl):
    return ctrl if isinstance(ctrl, dict) else ctrl.to_dict()


def _policy(method, d):
    if method == "baseline":
        return baseline_policy(float(d["lambda"]))
    return _LOADERS[method].from_dict(d)


def train(cfg: ExperimentConfig):
    """Fit every class for every k of the method's grid.

    Failures are recorded per class in ``timing.json`` and do not stop the sweep.
    Returns ``{k: {class: seconds or None}}``.
    """
    scene, classes = load_dataset(cfg)
    method = cfg.method
    out = {}
    for k in cfg.k_grid():
        root = os.path.join(cfg.out_dir, "models", run_name(method, k))
        os.makedirs(root, exist_ok=True)
        timing = {"method": method, "k": int(k), "tau_s": {}, "errors": {}}
        for name, demos in classes.items():
            path = os.path.join(root, f"{name}.json")
            try:
                ctrl, tau = fit_controller(method, k, demos, scene, cfg)
            except DSVSError as exc:
                log.warning("%s k=%s %s: %s", method, k, name, exc)
                timing["errors"][name] = f"{type(exc).__name__}: {exc}"
                timing["tau_s"][name] = None
                if os.path.exists(path):
                    os.remove(path)
                continue
            _dump(path, _controller_dict(ctrl))
            timing["tau_s"][name] = tau
        _dump(os.path.join(root, "timing.json"), timing)
        out[int(k)] = timing["tau_s"]
    return out


# -- evaluation -------------------------------------------------------------

def perturbed_starts(demos, count, radius_fraction, seed, class_index):
    """Demo starts shifted uniformly inside a ball.

    The radius is ``radius_fraction`` of the mean demo path length; start ``j``
    perturbs demo ``j % D``.
    """
    rng = np.random.default_rng([int(seed), int(class_index)])
    radius = radius_fraction * np.mean([d.path_length() for d in demos])
    starts = []
    for j in range(count):
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        r = radius * rng.uniform() ** (1.0 / 3.0)
        starts.append((j % len(demos), demos[j % len(demos)].positions[0] + r * u))
    return starts


def _cell(x):
    return "" if x is None or not np.isfinite(x) else repr(float(x))


def write_trajectory(path, traj):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    cols = [traj.info.get(k) for k in ("h", "V", "gamma")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for n in range(len(traj)):
            row = [n, repr(float(traj.t[n]))]
            for arr in (traj.positions, traj.s, traj.e, traj.v):
                row += [_cell(x) for x in arr[n]]
            row += [_cell(c[n]) if c is not None and n < len(c) else "" for c in cols]
            w.writerow(row)


def _run(policy, start, scene, sim):
    """``(trajectory or None, flags)`` of one closed-loop run."""
    try:
        traj = simulate(policy, scene.camera_at(start), scene, sim)
        return traj, {"converged": traj.converged, "diverged": False, "error": None}
    except Diverged as exc:
        return exc.trajectory, {"converged": False, "diverged": True, "error": str(exc)}
    except (DSVSError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return None, {"converged": False, "diverged": False,
                      "error": f"{type(exc).__name__}: {exc}"}


def _evaluate_class(method, ctrl_dict, demos, scene, cfg, class_index, traj_dir):
    ev = cfg["evaluate"]
    sim = sim_config(cfg)
    policy = _policy(method, ctrl_dict)
    ppu = float(ev["pixels_per_unit"])
    starts = [("demo", i, i, d.positions[0]) for i, d in enumerate(demos)]
    starts += [("perturbed", j, di, p) for j, (di, p) in enumerate(perturbed_starts(
        demos, int(ev["perturbed_starts"]), float(ev["perturb_radius"]), ev["seed"],
        class_index))]
    runs = []
    for kind, idx, di, start in starts:
        traj, flags = _run(policy, start, scene, sim)
        run = {"start": kind, "index": idx, "demo": di, **flags,
               "steps": None if traj is None else len(traj) - 1,
               "final_error": None if traj is None else float(traj.error_norms[-1])}
        if traj is not None and not flags["diverged"]:
            # reproduction accuracy is measured from the demonstrated starts only
            if kind == "demo":
                run.update(metrics.reproduction_metrics(traj, demos[di], ppu))
            if method == "clfdm":
                run["lyapunov_violations"] = metrics.lyapunov_violations(
                    traj, policy.rho0, sim.T, sim.convergence_tol)
                run["fallback_steps"] = int(np.nansum(traj.info.get("fallback", [])))
            if method == "fdm":
                run["gamma_branch_crossings"] = metrics.gamma_branch_crossings(traj)
        if traj is not None and ev["write_trajectories"] and traj_dir is not None:
            write_trajectory(os.path.join(traj_dir, f"{demos[0].class_name}_{kind}_{idx}.csv"),
                             traj)
        runs.append(run)
    ok = [r for r in runs if "p_rms_mm" in r]
    summary = {key: metrics.mean_std([r[key] for r in ok]) for key in METRIC_KEYS}
    summary.update({
        "runs": len(runs),
        "converged": sum(r["converged"] for r in runs),
        "diverged": sum(r["diverged"] for r in runs),
        "failed": sum(r["error"] is not None and not r["diverged"] for r in runs),
        "demo_path_length_mm": 1e3 * float(np.mean([d.path_length() for d in demos])),
        "demo_feature_excursion_px": ppu * float(np.mean([d.feature_excursion() for d in demos])),
    })
    if method == "clfdm":
        summary["lyapunov_violations"] = sum(r.get("lyapunov_violations", 0) for r in runs)
        clf = policy.clf
        tr = build_clf_training(demos, scene.L_target_pinv)
        summary["training_violation_fraction"] = violation_fraction(clf, tr.inputs, tr.outputs)
    if method == "fdm":
        summary["jacobian_at"] = policy.jacobian_at
        summary["gamma_branch_crossings"] = sum(r.get("gamma_branch_crossings", 0) for r in runs)
    return {"runs": runs, "summary": summary, "error": None}


def evaluate(cfg: ExperimentConfig):
    """Evaluate every trained k of the method's grid; returns the report paths."""
    scene, classes = load_dataset(cfg)
    method = cfg.method
    paths = []
    for k in cfg.k_grid():
        name = run_name(method, k)
        model_dir = os.path.join(cfg.out_dir, "models", name)
        timing_path = os.path.join(model_dir, "timing.json")
        if not os.path.isfile(timing_path):
            raise ParseError(f"{timing_path}: models not trained for {method} k={k}")
        timing = _load(timing_path)
        traj_dir = os.path.join(cfg.out_dir, "trajectories", name)
        per_class = {}
        for ci, (cname, demos) in enumerate(classes.items()):
            path = os.path.join(model_dir, f"{cname}.json")
            if not os.path.isfile(path):
                per_class[cname] = {"runs": [], "summary": None,
                                    "error": timing["errors"].get(cname, "model missing")}
                continue
            per_class[cname] = _evaluate_class(method, _load(path), demos, scene, cfg, ci,
                                               traj_dir)
        done = [c["summary"] for c in per_class.values() if c["summary"] is not None]
        summary = {key: metrics.mean_std([s[key]["mean"] for s in done
                                          if s[key]["mean"] is not None])
                   for key in METRIC_KEYS}
        for key in ("runs", "converged", "diverged", "failed"):
            summary[key] = sum(s[key] for s in done)
        summary["classes_failed"] = sum(c["summary"] is None for c in per_class.values())
        rep = {"method": method, "k": int(k), "config": cfg.to_dict(), "classes": per_class,
               "summary": summary}
        path = os.path.join(cfg.out_dir, "reports", f"{name}.json")
        _dump(path, rep)
        taus = [t for t in timing["tau_s"].values() if t is not None]
        _dump(os.path.join(cfg.out_dir, "reports", f"{name}.timing.json"),
              {"method": method, "k": int(k),
               "tau_ms": metrics.mean_std([1e3 * t for t in taus]),
               "classes": {c: (None if t is None else 1e3 * t)
                           for c, t in timing["tau_s"].items()}})
        paths.append(path)
    return paths


# -- reporting --------------------------------------------------------------

def _fmt(ms):
    if ms["mean"] is None:
        return "n/a"
    return f"{ms['mean']:.3g} ± {ms['std']:.2g}"


def report(paths, out_dir=None):
    """Table of (method, k, p_RMS, v_RMS, s_RMS, tau) rows from report files.

    Writes ``table.csv`` and ``table.md`` into ``out_dir`` when given and
    returns the markdown table. Raises :class:`NoReports` for no input.
    """
    paths = list(paths)
    if not paths:
        raise NoReports("no reports to tabulate; run evaluate first")
    rows = []
    for p in paths:
        rep = _load(p)
        timing_path = p[:-len(".json")] + ".timing.json"
        tau = (_load(timing_path)["tau_ms"] if os.path.isfile(timing_path)
               else {"mean": None, "std": None})
        rows.append((rep["method"], rep["k"], rep["summary"], tau))
    order = {m: i for i, m in enumerate(METHODS)}
    rows.sort(key=lambda r: (order.get(r[0], len(order)), r[1]))
    cols = list(METRIC_KEYS) + ["tau_ms"]
    md = ["| method | k | p_RMS (mm) | v_RMS (mm/s) | s_RMS (px) | tau (ms) | converged |",
          "|---|---|---|---|---|---|---|"]
    for method, k, s, tau in rows:
        cells = [_fmt(s[c]) for c in METRIC_KEYS] + [_fmt(tau)]
        md.append(f"| {method} | {k} | " + " | ".join(cells)
                  + f" | {s['converged']}/{s['runs']} |")
    table = "\n".join(md) + "\n"
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "table.md"), "w") as fh:
            fh.write(table)
        with open(os.path.join(out_dir, "table.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "k"] + [f"{c}_{x}" for c in cols for x in ("mean", "std")]
                       + ["converged", "runs"])
            for method, k, s, tau in rows:
                vals = []
                for ms in [s[c] for c in METRIC_KEYS] + [tau]:
                    vals += [_cell(ms["mean"]), _cell(ms["std"])]
                w.writerow([method, k] + vals + [s["converged"], s["runs"]])
    return table
