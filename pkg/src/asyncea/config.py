"""Structured experiment configuration (TOML) with type-checked overrides."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

from asyncea._toml import load_toml, tomllib
from asyncea.engine import LatencyModel, RunConfig
from asyncea.problems import FitnessProblem, Quantized, make_problem
from asyncea.search_space import BoundsSpec, ConfigurationError, MutationParams

_NUM = (int, float)

# section -> field -> (accepted types, default)
SCHEMA = {
    "problem": {
        "name": (str, "nroo-surrogate"),
        "grain": (_NUM, 0.0),
        "grain_relative": (_NUM, 0.0),
        "nk_n": (int, 16),
        "nk_k": (int, 2),
        "nk_seed": (int, 0),
        "bounds_file": (str, ""),
        "constants": (dict, {}),
    },
    "engine": {
        "workers": (int, 64),
        "virtual_hours": (_NUM, 24.0),
        "max_evaluations": (int, 0),
        "seed": (int, 0),
        "crash_prob": (_NUM, 0.0),
        "mode": (str, "simulated"),
    },
    "mutation": {
        "p": (_NUM, 0.1),
        "r": (_NUM, 0.05),
        "min_delta": (int, 0),
    },
    "latency": {
        "kind": (str, "lognormal"),
        "min": (_NUM, 1629.0),
        "mean": (_NUM, 2426.0),
        "max": (_NUM, 6169.0),
        "tail_prob": (_NUM, 1e-3),
    },
    "analysis": {
        "p_values": (list, [0.1, 0.2, 0.3, 0.4]),
        "r_values": (list, [0.05, 0.1, 0.2, 0.5]),
        "repeats": (int, 5),
        "base_seed": (int, 0),
        "walk_length": (int, 1024),
        "walk_seed": (int, 0),
        "walk_seeds": (list, [0]),
        "output_dir": (str, "out"),
    },
}


def defaults() -> dict:
    return {sec: {k: copy.deepcopy(v[1]) for k, v in fields.items()} for sec, fields in SCHEMA.items()}


def _check_type(section, key, value):
    try:
        types, _ = SCHEMA[section][key]
    except KeyError:
        raise ConfigurationError(f"[{section}] unknown field {key!r}") from None
    if isinstance(value, bool) or not isinstance(value, types):
        names = types.__name__ if isinstance(types, type) else "number"
        raise ConfigurationError(f"[{section}] {key}: expected {names}, got {type(value).__name__} {value!r}")
    if types is list:
        for item in value:
            if isinstance(item, bool) or not isinstance(item, _NUM):
                raise ConfigurationError(f"[{section}] {key}: list items must be numbers, got {item!r}")


def merge(data: dict, overrides: dict | None = None) -> dict:
    """Validate ``data`` against the schema, fill defaults, apply overrides.

    ``overrides`` maps ``"section.key"`` to values; ``None`` values are skipped.
    """
    out = defaults()
    for section, fields in data.items():
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown section [{section}]")
        if not isinstance(fields, dict):
            raise ConfigurationError(f"[{section}] must be a table")
        for key, value in fields.items():
            _check_type(section, key, value)
            out[section][key] = value
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        _check_type(section, key, value)
        out[section][key] = value
    return out


def load(path=None, overrides: dict | None = None) -> dict:
    data = {}
    if path is not None:
        try:
            data = load_toml(path)
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    return merge(data, overrides)


@dataclass
class Experiment:
    """Objects built from a validated configuration."""

    conf: dict
    problem: FitnessProblem
    run: RunConfig
    mutation: MutationParams

    @property
    def analysis(self) -> dict:
        return self.conf["analysis"]


def build(conf: dict) -> Experiment:
    prob_conf = conf["problem"]
    name = prob_conf["name"]
    options = {}
    if name == "nk":
        options = {"N": prob_conf["nk_n"], "K": prob_conf["nk_k"], "seed": prob_conf["nk_seed"]}
    else:
        if prob_conf["constants"]:
            options["constants"] = prob_conf["constants"]
        if prob_conf["bounds_file"]:
            options["bounds"] = BoundsSpec.from_file(prob_conf["bounds_file"])
    problem = make_problem(name, **options)
    if prob_conf["grain"] and prob_conf["grain_relative"]:
        raise ConfigurationError("[problem] set at most one of grain and grain_relative")
    if prob_conf["grain"]:
        problem = Quantized(problem, float(prob_conf["grain"]))
    elif prob_conf["grain_relative"]:
        ref = problem.reference_fitness()
        if not ref:
            raise ConfigurationError("[problem] grain_relative needs a problem with a reference candidate")
        problem = Quantized(problem, float(prob_conf["grain_relative"]) * ref)

    m = conf["mutation"]
    min_delta = int(m["min_delta"])
    if name == "nk" and min_delta == 0:
        # binary variables: floor(r * 1) == 0 would freeze every coordinate
        min_delta = 1
    mutation = MutationParams(float(m["p"]), float(m["r"]), min_delta)
    lat = conf["latency"]
    if lat["kind"] == "constant":
        latency = LatencyModel.constant(float(lat["mean"]))
    else:
        latency = LatencyModel(float(lat["min"]), float(lat["mean"]), float(lat["max"]),
                               float(lat["tail_prob"]), lat["kind"])
    e = conf["engine"]
    if e["mode"] not in ("simulated", "local"):
        raise ConfigurationError(f"[engine] mode must be 'simulated' or 'local', got {e['mode']!r}")
    hours = float(e["virtual_hours"])
    max_evals = int(e["max_evaluations"]) or None
    time_limit = math.inf if (max_evals and hours <= 0) else hours * 3600.0
    run = RunConfig(
        workers=int(e["workers"]),
        time_limit=time_limit,
        mutation=mutation,
        seed=int(e["seed"]),
        latency=latency,
        crash_prob=float(e["crash_prob"]),
        max_evaluations=max_evals,
        problem=name,
    )
    a = conf["analysis"]
    for key in ("p_values", "r_values"):
        if not a[key]:
            raise ConfigurationError(f"[analysis] {key} must be non-empty")
    if a["repeats"] < 1:
        raise ConfigurationError("[analysis] repeats must be >= 1")
    if a["walk_length"] < 2:
        raise ConfigurationError("[analysis] walk_length must be >= 2")
    for p in a["p_values"]:
        MutationParams(float(p), mutation.r)
    for r in a["r_values"]:
        MutationParams(mutation.p, float(r))
    return Experiment(conf, problem, run, mutation)
