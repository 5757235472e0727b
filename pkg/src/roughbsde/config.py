"""Plain-text experiment configs: one ``key = value`` per line, values in JSON syntax.

Bare words are read as strings, ``#`` starts a comment line.  Every
experiment declares its parameters with defaults; unknown keys are errors.
"""

import hashlib
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


COMMON = {"experiment": None, "seed": 0, "output_dir": None}

EXPERIMENTS = {
    "chen-check": {
        "description": "Chen's relation for canonical lifts of random piecewise-linear paths",
        "params": {"n_paths": 100, "max_dim": 3, "max_cells": 64, "tol": 1e-12, "path": "random"},
    },
    "pvar-check": {
        "description": "p-variation dynamic programme against brute force over all partitions",
        "params": {"n_paths": 200, "max_points": 14, "exponents": [1.0, 1.5, 2.0, 2.5]},
    },
    "ito-consistency": {
        "description": "integral of W against its Ito lift versus (W_T^2 - T)/2, with mesh rate fit",
        "params": {"levels": [4, 5, 6, 7], "n_samples": 10000, "T": 1.0, "slope_low": 0.4, "slope_high": 0.6},
    },
    "linear-rough-bsde-duality": {
        "description": "linear rough BSDE with constant scalar drift coefficient against its closed form",
        "params": {"steps": 10, "substeps": 32, "g": 0.5, "amplitude": 1.0, "tol": 1e-6},
    },
    "quadratic-cole-hopf": {
        "description": "quadratic BSDE f = L|z|^2 against the exponential transform",
        "params": {"steps": 10, "L": 0.25, "xi_scale": 0.03, "tol": 1e-6, "max_ratio": 0.55},
    },
    "nonlinear-flow": {
        "description": "nonlinear rough drift via the flow transform: Cauchy table over dyadic approximations",
        "params": {
            "steps": 8, "substeps": 32, "amplitude": 0.1, "levels": [3, 4, 5, 6, 7], "L": 0.25,
            "xi_scale": 0.03, "eps": 0.3, "drift_scale": 1.0,
        },
    },
    "rough-pde-fk-vs-fd": {
        "description": "Feynman-Kac values of the rough PDE against Crank-Nicolson finite differences",
        "params": {"steps": 10, "substeps": 8, "amplitude": 0.3, "g": 0.5, "x_points": 9, "dx": 0.01, "tol": 2e-2},
    },
    "rough-pde-continuity": {
        "description": "sup distance of rough PDE solutions for dyadic lifts to the limit drive",
        "params": {
            "steps": 10, "substeps": 8, "amplitude": 0.3, "g": 0.5, "levels": [1, 2, 3, 4],
            "times": [0.1, 0.3, 0.7], "x_points": 3,
        },
    },
}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(key, value, default):
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"key {key!r} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise ConfigError(f"key {key!r} must be a list of numbers")
        kind = int if all(isinstance(v, int) for v in default) else float
        return [_coerce(key, v, kind(0)) for v in value]
    if not _is_number(value):
        raise ConfigError(f"key {key!r} must be numeric")
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"key {key!r} must be an integer")
        return int(value)
    return float(value)


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    output_dir: str = None
    params: dict = field(default_factory=dict)

    def to_dict(self):
        out = {"experiment": self.experiment, "seed": self.seed}
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        out.update(self.params)
        return out

    def dumps(self):
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in self.to_dict().items())

    def sha256(self):
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    @property
    def directory(self):
        return self.output_dir or self.experiment


def from_dict(raw):
    if "experiment" not in raw:
        raise ConfigError("missing key 'experiment'")
    name = raw["experiment"]
    if not isinstance(name, str) or name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}")
    declared = EXPERIMENTS[name]["params"]
    unknown = sorted(set(raw) - set(COMMON) - set(declared))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    params = {}
    for key, default in declared.items():
        params[key] = _coerce(key, raw.get(key, default), default)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    out_dir = raw.get("output_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("output_dir must be a string")
    return ExperimentConfig(name, seed, out_dir, params)


def loads(text):
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = _parse_value(value)
    return from_dict(raw)


def load(filename):
    try:
        with open(filename, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {filename}: {exc.strerror}") from exc
    return loads(text)
