"""
Run configuration: a JSON object with model, grid, solver, mc, experiment
and output sections.  Configurations round-trip losslessly through their
JSON form; every command embeds the resolved dictionary and its hash in
its outputs.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

from .model import ParamError, params_from_dict, params_to_dict

_GRID_KEYS = {"x_min", "x_max", "n_nodes"}
_SOLVER_KEYS = {"tol", "max_iter", "bound"}
_MC_KEYS = {"x0", "T", "dt", "paths", "seed", "policy", "threads"}
_EXPERIMENT_KEYS = {"Ls", "xs", "ell", "levels_per_side"}
_OUTPUT_KEYS = {"dir"}
_SECTIONS = {"model", "grid", "solver", "mc", "experiment", "output"}


def _check_keys(section, d, allowed):
    unknown = set(d) - allowed
    if unknown:
        raise ParamError(f"unknown {section} config keys: {sorted(unknown)}")


@dataclass
class RunConfig:
    model: dict = field(default_factory=lambda: {
        "alpha": 0.5, "lambda": 0.1, "n": 0.04, "sigma": 0.2,
        "beta": 0.05, "gamma": 0.5,
    })
    grid: dict = field(default_factory=lambda: {
        "x_min": 1e-3, "x_max": 1e3, "n_nodes": 2048,
    })
    solver: dict = field(default_factory=lambda: {
        "tol": 1e-8, "max_iter": 200, "bound": "inf",
    })
    mc: dict = field(default_factory=lambda: {
        "x0": 1.0, "T": 400.0, "dt": 0.01, "paths": 200000,
        "seed": 20240901, "policy": "constant:0.21", "threads": 1,
    })
    experiment: dict = field(default_factory=lambda: {
        "Ls": [0.21, 0.5, 1.0], "xs": [0.5, 1.0, 2.0],
        "ell": 1.0, "levels_per_side": 6,
    })
    output: dict = field(default_factory=lambda: {"dir": "out"})

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - _SECTIONS
        if unknown:
            raise ParamError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls()
        for section, allowed in (
            ("grid", _GRID_KEYS), ("solver", _SOLVER_KEYS), ("mc", _MC_KEYS),
            ("experiment", _EXPERIMENT_KEYS), ("output", _OUTPUT_KEYS),
        ):
            got = d.get(section, {})
            _check_keys(section, got, allowed)
            getattr(cfg, section).update(got)
        if "model" in d:
            cfg.model = dict(d["model"])
        params_from_dict(cfg.model)  # validates keys and values
        if cfg.solver["bound"] != "inf" and not (float(cfg.solver["bound"]) > 0.0):
            raise ParamError("solver.bound must be positive or \"inf\"")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {
            "model": dict(self.model), "grid": dict(self.grid),
            "solver": dict(self.solver), "mc": dict(self.mc),
            "experiment": dict(self.experiment), "output": dict(self.output),
        }

    def params_and_utility(self):
        return params_from_dict(self.model)

    @property
    def bound(self) -> float:
        b = self.solver["bound"]
        return math.inf if b == "inf" else float(b)

    def sha256(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        ).hexdigest()
