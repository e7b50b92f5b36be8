"""Experiment configuration: a JSON key-value tree validated against a fixed schema.

Unknown keys are rejected by name. The full schema, with defaults, is in
``SCHEMA`` and documented in the README.
"""
from __future__ import annotations

import copy
import hashlib
import inspect
import json
import math
from dataclasses import dataclass, field

from .coefficients import MODELS

EXPERIMENTS = ("mean-field-rate", "wasserstein-decay", "qv-convergence", "clt-initial",
               "clt-trajectory", "spde-only", "oracle-suite")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# top-level keys with defaults; nested blocks are validated separately
SCHEMA = {
    "experiment": None,
    "seed": 20240601,
    "model": {"name": "linrelax", "params": {}},
    "initial": {"a0": 0.6, "a1": 0.3, "c": 0.7},
    "alpha": 0.5,
    "d": 1,
    "d_v": 1,
    "epsilon": 0.1,
    "dt": 0.02,
    "T": 1.0,
    "reference": {"n_locations": 16384, "K": 8},
    "M": [],
    "N": [],
    "sizes": [],
    "n_runs": 8,
    "dictionary": {"P_x": 3, "P_u": 2, "scales": [0.5, 1.0], "members": [0, 1, 2], "norm_order": 2},
    "options": {},
    "acceptance": {},
    "output": "out",
    "workers": 1,
}

NESTED = {
    "initial": {"a0", "a1", "c"},
    "reference": {"n_locations", "K"},
    "dictionary": {"P_x", "P_u", "scales", "members", "norm_order"},
    "model": {"name", "params"},
}

# experiment-specific option and acceptance keys
OPTIONS = {
    "mean-field-rate": {"p", "sweeps"},
    "wasserstein-decay": {"p", "n_sub", "n_rep"},
    "qv-convergence": {"g_locations", "g_copies", "node_every"},
    "clt-initial": {"schedules", "q_copies", "q_locations"},
    "clt-trajectory": {"g_locations", "g_copies", "node_every", "q_copies", "q_locations",
                       "ode_dt"},
    "spde-only": {"n_paths", "spde_dt", "A", "C", "Q0"},
    "oracle-suite": {"n_instances"},
}
ACCEPTANCE = {
    "mean-field-rate": {"M_slope", "N_slope"},
    "wasserstein-decay": {"max_slope"},
    "qv-convergence": {"final_gap"},
    "clt-initial": {"p_min", "ratio_min"},
    "clt-trajectory": {"rel_tol"},
    "spde-only": {"n_se"},
    "oracle-suite": set(),
}


def _check_keys(block: dict, allowed, where: str):
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a mapping")
    for k in block:
        if k not in allowed:
            raise ConfigError(f"unknown key {where + '.' if where else ''}{k}")


def schedule_sizes(kind: str, N: int, alpha: float, d: int, ratio: float = 0.1) -> int:
    """M for one N under a named scaling schedule.

    ``clt``: largest M with sqrt(M) N^(-alpha/d) <= ratio; ``critical``:
    sqrt(M) = N^(alpha/d); ``broken``: sqrt(M) = 3 N^(alpha/d).
    """
    s = N ** (alpha / d)
    if kind == "clt":
        M = int(math.floor((ratio * s) ** 2 + 1e-9))
    elif kind == "critical":
        M = int(round(s * s))
    elif kind == "broken":
        M = int(round(9.0 * s * s))
    else:
        raise ConfigError(f"unknown schedule {kind!r}")
    if M < 1:
        raise ConfigError(f"schedule {kind!r} gives M < 1 at N={N}")
    return M


def scaling_ratio(M: int, N: int, alpha: float, d: int) -> float:
    return math.sqrt(M) * N ** (-alpha / d)


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    model: str
    model_params: dict
    initial: dict
    alpha: float
    d: int
    d_v: int
    epsilon: float
    dt: float
    T: float
    K_ref: int
    n_ref: int
    M: list
    N: list
    sizes: list
    n_runs: int
    dictionary: dict
    options: dict
    acceptance: dict
    output: str
    workers: int
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def schedule_decreasing(self) -> bool:
        """Whether sqrt(M) N^(-alpha/d) decreases along ``sizes``."""
        r = [scaling_ratio(M, N, self.alpha, self.d) for M, N in self.sizes]
        return all(b < a for a, b in zip(r, r[1:]))

    def sha256(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """sha256 of the canonical JSON of everything that can change results.

    Scheduling keys (workers, output directory) are left out.
    """
    kept = {k: v for k, v in raw.items() if k not in ("workers", "output")}
    blob = json.dumps(kept, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("options", "acceptance", "params"):
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positive_int(v, key):
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError(f"{key} must be a positive integer, got {v!r}")
    return v


def _positive(v, key):
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
        raise ConfigError(f"{key} must be positive, got {v!r}")
    return float(v)


def validate(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Merge with defaults, check every key and value, return a typed config."""
    _check_keys(raw, SCHEMA, "")
    cfg = _merge(SCHEMA, raw)
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    exp = cfg["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
    for key, allowed in NESTED.items():
        _check_keys(cfg[key], allowed, key)
    _check_keys(cfg["options"], OPTIONS[exp], "options")
    _check_keys(cfg["acceptance"], ACCEPTANCE[exp], "acceptance")
    name = cfg["model"]["name"]
    if name not in MODELS:
        raise ConfigError(f"model.name must be one of {sorted(MODELS)}, got {name!r}")
    params = cfg["model"].get("params", {}) or {}
    sig = inspect.signature(MODELS[name]).parameters
    for k in params:
        if k not in sig:
            raise ConfigError(f"unknown key model.params.{k}")
    eps = cfg["epsilon"]
    if not isinstance(eps, (int, float)) or not 0.0 < eps <= 0.5:
        raise ConfigError(f"epsilon must lie in (0, 0.5], got {eps!r}")
    alpha = cfg["alpha"]
    if not isinstance(alpha, (int, float)) or not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha!r}")
    d = _positive_int(cfg["d"], "d")
    d_v = _positive_int(cfg["d_v"], "d_v")
    dt = _positive(cfg["dt"], "dt")
    T = cfg["T"]
    if not isinstance(T, (int, float)) or T < 0:
        raise ConfigError(f"T must be nonnegative, got {T!r}")
    if abs(round(T / dt) * dt - T) > 1e-9 * max(1.0, T):
        raise ConfigError(f"T={T} must be a multiple of dt={dt}")
    Ms = [_positive_int(m, "M") for m in cfg["M"]]
    Ns = [_positive_int(n, "N") for n in cfg["N"]]
    sizes = []
    for pair in cfg["sizes"]:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"sizes entries must be [M, N] pairs, got {pair!r}")
        sizes.append((_positive_int(pair[0], "sizes.M"), _positive_int(pair[1], "sizes.N")))
    for n in Ns + [s[1] for s in sizes]:
        side = round(n ** (1.0 / d))
        if side ** d != n:
            raise ConfigError(f"N={n} is not a perfect {d}-th power")
    ini = cfg["initial"]
    for k in ("a0", "a1"):
        if not isinstance(ini[k], (int, float)) or ini[k] < 0:
            raise ConfigError(f"initial.{k} must be nonnegative")
    if not 0.0 <= ini["c"] <= 1.0:
        raise ConfigError("initial.c must lie in [0, 1]")
    ref = cfg["reference"]
    K_ref = _positive_int(ref["K"], "reference.K")
    n_ref = _positive_int(ref["n_locations"], "reference.n_locations")
    dic = cfg["dictionary"]
    _positive_int(dic["P_x"], "dictionary.P_x")
    _positive_int(dic["P_u"], "dictionary.P_u")
    if dic["norm_order"] not in (0, 1, 2):
        raise ConfigError("dictionary.norm_order must be 0, 1 or 2")
    P = dic["P_x"] * dic["P_u"]
    for m in dic["members"]:
        if not isinstance(m, int) or not 0 <= m < P:
            raise ConfigError(f"dictionary.members entry {m!r} outside 0..{P - 1}")
    seed = cfg["seed"]
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return ExperimentConfig(exp, seed, name, dict(params), dict(ini), float(alpha), d, d_v, float(eps),
                            dt, float(T), K_ref, n_ref, Ms, Ns, sizes, _positive_int(cfg["n_runs"], "n_runs"),
                            dict(dic), dict(cfg["options"]), dict(cfg["acceptance"]), str(cfg["output"]),
                            _positive_int(cfg["workers"], "workers"), cfg)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return validate(raw, overrides)
