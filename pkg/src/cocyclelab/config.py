"""Strict TOML experiment configuration.

Layout::

    version = 1
    seed = 42
    task = "lyapunov"          # optional when given on the command line
    threads = 4                # optional
    out = "results"            # optional

    [model]
    kind = "anderson"
    W = 1

    [lyapunov]                 # one table named after the task
    z = [3.0, "0.5+0.5j"]
    n = 100000

Every table accepts only the keys listed in the schemas below.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

import numpy as np

from . import drivers
from .drivers import PotentialModel

CONFIG_VERSION = 1

TASKS = ("lyapunov", "field", "riesz", "circular", "ids", "thouless", "scan-liminf", "scan-pn",
         "cover", "subseq", "restricted", "green", "ldp")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every offending key."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


_REQUIRED = object()


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _pos_int(v):
    v = _int(v)
    if v < 1:
        raise ValueError("expected a positive integer")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _complex(v):
    if isinstance(v, str):
        return complex(v.replace(" ", ""))
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(_float(v[0]), _float(v[1]))
    return complex(_float(v))


def _complex_list(v):
    # a list is always a list of points; write a single point as a number or a string
    if isinstance(v, (list, tuple)):
        if not v:
            raise ValueError("expected at least one point")
        return [_complex(x) for x in v]
    return [_complex(v)]


def _float_list(v):
    if not isinstance(v, (list, tuple)) or not v:
        raise TypeError("expected a non-empty list of numbers")
    return [_float(x) for x in v]


def _int_list(v):
    if not isinstance(v, (list, tuple)) or not v:
        raise TypeError("expected a non-empty list of integers")
    return [_pos_int(x) for x in v]


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _choice(*opts):
    def check(v):
        if v not in opts:
            raise ValueError(f"expected one of {opts}")
        return v
    return check


def _matrix(v):
    a = np.asarray(v, float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise ValueError("expected a square matrix")
    return a.tolist()


def _interval(v):
    a = _float_list(v)
    if len(a) != 2 or not a[1] > a[0]:
        raise ValueError("expected [a, b] with b > a")
    return a


def _grid(v):
    if not isinstance(v, dict):
        raise TypeError("expected a table")
    return _check_table("grid", v, GRID_SCHEMA)


def _energy_grid(v):
    if not isinstance(v, dict):
        raise TypeError("expected a table")
    return _check_table("energies", v, ENERGY_SCHEMA)


def _weight(v):
    if not isinstance(v, dict):
        raise TypeError("expected a table")
    return _check_table("weight", v, WEIGHT_SCHEMA)


GRID_SCHEMA = {"x0": (_float, _REQUIRED), "x1": (_float, _REQUIRED), "y0": (_float, _REQUIRED),
               "y1": (_float, _REQUIRED), "h": (_float, _REQUIRED)}
ENERGY_SCHEMA = {"start": (_float, _REQUIRED), "stop": (_float, _REQUIRED), "num": (_pos_int, _REQUIRED)}
WEIGHT_SCHEMA = {"kind": (_choice("power", "exp"), _REQUIRED), "param": (_float, _REQUIRED),
                 "scale": (_float, 1.0)}

MODEL_SCHEMAS: dict[str, dict[str, tuple[Callable, Any]]] = {
    "free": {"W": (_pos_int, 1)},
    "constant": {"V": (_matrix, _REQUIRED)},
    "anderson": {"W": (_pos_int, 1), "v": (_float, 1.0), "hopping": (_bool, True)},
    "lloyd": {"W": (_pos_int, 1), "scale": (_float, 1.0)},
    "iid": {"W": (_pos_int, 1), "distribution": (_choice(*drivers.IID_DISTRIBUTIONS), _REQUIRED),
            "scale": (_float, 1.0), "structure": (_choice("scalar", "diagonal"), "diagonal"),
            "hopping": (_bool, False), "support": (lambda v: [_matrix(x) for x in v], None),
            "weights": (_float_list, None)},
    "almost-mathieu": {"coupling": (_float, _REQUIRED), "alpha": (_float, drivers.GOLDEN)},
}

_REF = {"ref_n": (_pos_int, 20000), "ref_samples": (_pos_int, 8)}

TASK_SCHEMAS: dict[str, dict[str, tuple[Callable, Any]]] = {
    "lyapunov": {"z": (_complex_list, _REQUIRED), "n": (_pos_int, _REQUIRED),
                 "samples": (_pos_int, 1), "stride": (_pos_int, 1)},
    "field": {"grid": (_grid, _REQUIRED), "n": (_pos_int, 1000), "k": (_pos_int, 1),
              "samples": (_pos_int, 1), "estimator": (_choice("qr", "wedge", "analytic"), "qr"),
              "shared": (_bool, False)},
    "riesz": {"grid": (_grid, _REQUIRED), "n": (_pos_int, 1000), "k": (_pos_int, 1),
              "samples": (_pos_int, 1), "estimator": (_choice("qr", "wedge", "analytic"), "qr"),
              "shared": (_bool, False), "strip": (_interval, None),
              "potential_at": (_complex_list, None), "max_radius": (_pos_int, 4)},
    "circular": {"R": (_float_list, _REQUIRED), "ntheta": (_pos_int, 128), "n": (_pos_int, 1000),
                 "samples": (_pos_int, 1)},
    "ids": {"L": (_pos_int, _REQUIRED), "samples": (_pos_int, 1), "energies": (_energy_grid, None)},
    "thouless": {"L": (_pos_int, 2000), "samples": (_pos_int, 50), "n": (_pos_int, 20000),
                 "lyap_samples": (_pos_int, 4), "points": (_complex_list, None)},
    "scan-liminf": {"energies": (_energy_grid, _REQUIRED), "tau": (_float, 0.5),
                    "i_max": (_pos_int, 20), "i_min": (_pos_int, 10), "eps": (_float, None), **_REF},
    "scan-pn": {"energies": (_energy_grid, _REQUIRED), "weight": (_weight, _REQUIRED),
                "n_max": (_pos_int, _REQUIRED), "threshold": (_float, None)},
    "cover": {"interval": (_interval, _REQUIRED), "eps": (_float, _REQUIRED),
              "levels": (_int_list, _REQUIRED), "gauges": (lambda v: [_str(x) for x in v], None),
              "orbits": (_pos_int, 1), **_REF},
    "subseq": {"E": (_float, _REQUIRED), "N_max": (_pos_int, _REQUIRED), **_REF},
    "restricted": {"z": (_complex, _REQUIRED), "n": (_pos_int, _REQUIRED),
                   "frames": (_pos_int, 1), "frame": (_choice("dirichlet", "random"), "random")},
    "green": {"z": (_complex, _REQUIRED), "n_min": (_pos_int, 1), "n_max": (_pos_int, 60),
              "L": (_pos_int, 200)},
    "ldp": {"E": (_float, _REQUIRED), "j": (_pos_int, 1), "epsilon": (_float, _REQUIRED),
            "n_list": (_int_list, _REQUIRED), "M": (_pos_int, 4000), **_REF},
}

TOP_SCHEMA = {"version": (_int, _REQUIRED), "seed": (_int, None), "task": (_choice(*TASKS), None),
              "threads": (_pos_int, None), "out": (_str, None)}


def _check_table(name: str, table: dict, schema: dict) -> dict:
    problems = []
    out = {}
    for key in table:
        if key not in schema:
            problems.append(f"unknown key {name}.{key}")
    for key, (conv, default) in schema.items():
        if key in table:
            try:
                out[key] = conv(table[key])
            except ConfigError as exc:
                problems.extend(exc.problems)
            except (TypeError, ValueError) as exc:
                problems.append(f"invalid {name}.{key}: {exc}")
        elif default is _REQUIRED:
            problems.append(f"missing key {name}.{key}")
        else:
            out[key] = default
    if problems:
        raise ConfigError(problems)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    version: int
    seed: int
    task: str
    model: dict
    params: dict
    threads: int | None = None
    out: str | None = None

    def canonical(self) -> dict:
        return {"version": self.version, "seed": self.seed, "task": self.task,
                "model": self.model, "params": _canon(self.params)}

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _canon(v):
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, dict):
        return {k: _canon(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_canon(x) for x in v]
    return v


def parse_config(data: dict, task: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Validate a parsed TOML document; ``task`` / ``seed`` come from the command line."""
    if not isinstance(data, dict):
        raise ConfigError(["configuration must be a table"])
    problems = []
    allowed = set(TOP_SCHEMA) | {"model"} | set(TASKS)
    for key in data:
        if key not in allowed:
            problems.append(f"unknown key {key}")
    top = {k: v for k, v in data.items() if k in TOP_SCHEMA}
    try:
        top = _check_table("config", top, TOP_SCHEMA)
    except ConfigError as exc:
        problems.extend(exc.problems)
        top = {}
    if top.get("version") not in (None, CONFIG_VERSION):
        problems.append(f"version mismatch: expected {CONFIG_VERSION}, got {top['version']}")
    chosen = task or top.get("task")
    if task and top.get("task") and top["task"] != task:
        problems.append(f"task mismatch: config says {top['task']!r}, command says {task!r}")
    if chosen is None:
        problems.append("no task given")
    elif chosen not in TASKS:
        problems.append(f"unknown task {chosen!r}")
    final_seed = seed if seed is not None else top.get("seed")
    if final_seed is None:
        problems.append("missing key seed")
    elif not 0 <= final_seed < 2**64:
        problems.append("seed must be an unsigned 64-bit integer")
    for other in TASKS:
        if other in data and other != chosen:
            problems.append(f"table [{other}] does not belong to task {chosen!r}")
    model = {}
    m = data.get("model")
    if not isinstance(m, dict):
        problems.append("missing table model")
    else:
        kind = m.get("kind")
        if kind not in MODEL_SCHEMAS:
            problems.append(f"invalid model.kind: {kind!r}")
        else:
            try:
                model = {"kind": kind, **_check_table("model", {k: v for k, v in m.items() if k != "kind"},
                                                      MODEL_SCHEMAS[kind])}
            except ConfigError as exc:
                problems.extend(exc.problems)
    params = {}
    if chosen in TASK_SCHEMAS:
        t = data.get(chosen, {})
        if not isinstance(t, dict):
            problems.append(f"[{chosen}] must be a table")
        else:
            try:
                params = _check_table(chosen, t, TASK_SCHEMAS[chosen])
            except ConfigError as exc:
                problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(top["version"], int(final_seed), chosen, model, params,
                            top.get("threads"), top.get("out"))


def load_config(path: Path, task: str | None = None, seed: int | None = None) -> ExperimentConfig:
    try:
        with Path(path).open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"malformed TOML: {exc}"]) from exc
    return parse_config(data, task, seed)


def build_model(spec: dict) -> PotentialModel:
    kind = spec["kind"]
    if kind == "free":
        return drivers.free_model(spec["W"])
    if kind == "constant":
        return drivers.ConstantModel(np.asarray(spec["V"], float))
    if kind == "anderson":
        return drivers.anderson_bernoulli(spec["W"], spec["v"], spec["hopping"])
    if kind == "lloyd":
        return drivers.lloyd_model(spec["scale"], spec["W"])
    if kind == "iid":
        W = spec["W"]
        base = drivers.path_adjacency(W) if spec["hopping"] and W > 1 else None
        support = None if spec["support"] is None else tuple(np.asarray(s) for s in spec["support"])
        weights = None if spec["weights"] is None else tuple(spec["weights"])
        return drivers.IIDModel(W, spec["distribution"], spec["scale"], spec["structure"], base,
                                support, weights)
    if kind == "almost-mathieu":
        return drivers.almost_mathieu(spec["coupling"], spec["alpha"])
    raise ConfigError([f"invalid model.kind: {kind!r}"])
