"""Experiment configuration: YAML file merged over documented defaults."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import yaml

from ..errors import ConfigError

CONFIG_VERSION = 1
METHODS = ("baseline", "rds", "clfdm", "fdm")

DEFAULTS = {
    "config_version": CONFIG_VERSION,
    "method": "rds",
    "out_dir": "runs",
    "dataset": {
        # synthetic | baseline | path
        "source": "synthetic",
        "path": None,
        "classes": ["sshape", "jshape", "spiral"],
        "demos_per_class": 3,
        "raw_samples": 1000,
        "duration": 3.0,
        "n_samples": 100,
        "box_size": 0.5,
        "z_start": 1.0,
        "seed": 0,
    },
    "scene": {"side": 0.2, "goal_height": 0.5},
    "control": {
        "lambda": 1.0,
        "T": 0.03,
        "max_steps": 1000,
        "convergence_tol": 1e-3,
        "divergence_bound": 10.0,
        "max_speed": None,
    },
    "train": {
        "seed": 0,
        "k_grid": {"baseline": [0], "rds": [7, 11], "clfdm": [7, 11], "fdm": [50, 150]},
        "gmm": {"max_iter": 500, "tol": 1e-8, "reg": 1e-6, "min_count": 1.0},
        "clf": {"components": 2, "restarts": 5, "margin": 1e-4, "sharpness": 20.0,
                "conditioning": 1e-3, "v_scale": 0.1, "ceiling": 0.25, "max_iter": 300},
        "fdm": {"step_fraction": 0.9, "width_rule": "search", "width_scale": 2.0,
                "n_widths": 16, "stop_tol": 1e-6, "stall_steps": 10, "stall_tol": 1e-12,
                "max_backtrack": 12},
    },
    "rds": {
        "clock": {"t0_steps": 100, "decay_tau": 0.5},
        # a number replaces the clock by a constant gate (1.0 reproduces
        # the reshaped dynamics without handover)
        "h_constant": None,
    },
    # rho0 defaults to 0.1 * lambda
    "clfdm": {"rho0": None},
    "fdm": {"jacobian_at": "preimage"},
    "evaluate": {
        "seed": 0,
        "perturbed_starts": 5,
        # fraction of the mean demo path length
        "perturb_radius": 0.1,
        "pixels_per_unit": 500.0,
        "write_trajectories": True,
    },
}


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict) and key != "k_grid":
            if not isinstance(value, dict):
                raise ConfigError(f"{path} must be a mapping")
            out[key] = _merge(base[key], value, path)
        elif key == "k_grid":
            if not isinstance(value, dict):
                raise ConfigError(f"{path} must be a mapping")
            out[key].update(value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved configuration; every value is explicit."""

    values: dict

    def __post_init__(self):
        _validate(self.values)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def method(self):
        return self.values["method"]

    @property
    def out_dir(self):
        return self.values["out_dir"]

    @property
    def lam(self):
        return float(self.values["control"]["lambda"])

    @property
    def T(self):
        return float(self.values["control"]["T"])

    @property
    def rho0(self):
        rho0 = self.values["clfdm"]["rho0"]
        return 0.1 * self.lam if rho0 is None else float(rho0)

    def k_grid(self, method=None):
        return list(self.values["train"]["k_grid"][method or self.method])

    def to_dict(self):
        return copy.deepcopy(self.values)

    def with_overrides(self, method=None, k=None, seed=None, out_dir=None):
        v = self.to_dict()
        if method is not None:
            v["method"] = method
        if k is not None:
            v["train"]["k_grid"][v["method"]] = [int(k)]
        if seed is not None:
            for section in ("dataset", "train", "evaluate"):
                v[section]["seed"] = int(seed)
        if out_dir is not None:
            v["out_dir"] = str(out_dir)
        return ExperimentConfig(v)


def _validate(v):
    if v.get("config_version") != CONFIG_VERSION:
        raise ConfigError(f"config_version must be {CONFIG_VERSION}, got {v.get('config_version')!r}")
    if v["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {v['method']!r}")
    c = v["control"]
    if not c["lambda"] > 0:
        raise ConfigError("control.lambda must be positive")
    if not c["T"] > 0:
        raise ConfigError("control.T must be positive")
    if int(c["max_steps"]) < 1:
        raise ConfigError("control.max_steps must be >= 1")
    d = v["dataset"]
    if d["source"] not in ("synthetic", "baseline", "path"):
        raise ConfigError(f"dataset.source must be synthetic, baseline or path")
    if d["source"] == "path" and not d["path"]:
        raise ConfigError("dataset.path is required when dataset.source is 'path'")
    if int(d["n_samples"]) < 2 or int(d["demos_per_class"]) < 1:
        raise ConfigError("dataset needs n_samples >= 2 and demos_per_class >= 1")
    if d["source"] != "path" and not d["classes"]:
        raise ConfigError("dataset.classes is empty")
    for method, grid in v["train"]["k_grid"].items():
        if method not in METHODS:
            raise ConfigError(f"k_grid has unknown method {method!r}")
        if not grid:
            raise ConfigError(f"k grid for {method!r} is empty")
        if any(int(k) != k or k < 0 for k in grid):
            raise ConfigError(f"k grid for {method!r} must hold non-negative integers")
    if v["method"] not in v["train"]["k_grid"]:
        raise ConfigError(f"no k grid for method {v['method']!r}")
    if v["fdm"]["jacobian_at"] not in ("preimage", "epsilon"):
        raise ConfigError("fdm.jacobian_at must be 'preimage' or 'epsilon'")
    e = v["evaluate"]
    if int(e["perturbed_starts"]) < 0 or not e["perturb_radius"] >= 0:
        raise ConfigError("evaluate.perturbed_starts and perturb_radius must be >= 0")


def resolve(overrides: dict | None = None) -> ExperimentConfig:
    return ExperimentConfig(_merge(DEFAULTS, overrides or {}))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "config_version" not in raw:
        raise ConfigError(f"{path}: missing config_version")
    return resolve(raw)
