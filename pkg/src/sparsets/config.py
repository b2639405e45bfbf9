"""JSON run configuration: defaults, validation and section objects.

A config is a JSON object with the sections below.  Unknown keys anywhere
are rejected, as are wrong types and referenced files that do not exist.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError

_REQ = object()  # marks a key without default

DEFAULTS = {
    "seed": 0,
    "out_dir": "out",
    "replicates": 1,
    "data": {
        "kind": "expar",  # expar | nlar | ar1_panel | csv
        "csv_path": None,
        "n": None,
        "burn_in": 200,
        "window": 1,
        "M_l": 2,
        "splits": {"train": 5000, "val": 500, "test": 500},
        "standardize": True,
        # panel only
        "n_sequences": None,
        "length": 25,
        "horizon": 1,
        "phi": 0.5,
    },
    "model": {
        "kind": "rnn",
        "hidden": [200],
        "activations": ["tanh"],
        "init": "fan_in",
    },
    "prior": {
        "lambda_n": 1e-6,
        "sigma1_sq": 0.05,
        "sigma0_init_sq": 1e-3,
        "target_sparsity": 0.99,
        "sigma0_end_sq": 2e-5,
    },
    "schedule": {
        "T1": 1000,
        "T2": 2000,
        "T3": 7000,
        "temp_const": 1.0,
        "base_temperature": 0.1,
    },
    "train": {
        "lr": 0.01,
        "momentum": 0.9,
        "batch_size": 36,
        "iterations": 8000,
        "refine_iterations": 1000,
        "refine_lr": None,
        "gradient_clip": None,
        "prune_dead_units": True,
    },
    "uq": {
        "alpha": 0.1,
        "horizon": None,
        "calibration_split": "val",
        "hessian": {"fd_step": 1e-5, "jitter_start": 1e-8, "jitter_max": 1e-2, "method": "fd"},
    },
    "checkpoint": None,
}

_TYPES = {
    "seed": int,
    "out_dir": str,
    "replicates": int,
    "checkpoint": (str, type(None)),
}


def _merge(defaults: dict, given: dict, path: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict) and key != "splits":
            out[key] = _merge(defaults[key], val, where)
        else:
            out[key] = val
    return out


def _num(cfg, section, key, lo=None, hi=None, integer=False, allow_none=False, open_lo=False):
    val = cfg[section][key]
    where = f"{section}.{key}"
    if val is None:
        if allow_none:
            return
        raise ConfigError(f"{where} is required")
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where} must be a number")
    if integer and int(val) != val:
        raise ConfigError(f"{where} must be an integer")
    if lo is not None and (val < lo or (open_lo and val == lo)):
        raise ConfigError(f"{where} must be {'>' if open_lo else '>='} {lo}")
    if hi is not None and val > hi:
        raise ConfigError(f"{where} must be <= {hi}")


def validate(cfg: dict, base_dir: Path | None = None) -> dict:
    for key, typ in _TYPES.items():
        if not isinstance(cfg[key], typ) or isinstance(cfg[key], bool):
            raise ConfigError(f"{key} has the wrong type")
    if cfg["replicates"] < 1:
        raise ConfigError("replicates must be >= 1")

    d = cfg["data"]
    if d["kind"] not in ("expar", "nlar", "ar1_panel", "csv"):
        raise ConfigError(f"data.kind must be expar, nlar, ar1_panel or csv, got {d['kind']!r}")
    if d["kind"] == "csv":
        if not d["csv_path"]:
            raise ConfigError("data.csv_path is required for csv data")
        p = Path(d["csv_path"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"data.csv_path {str(p)!r} does not exist")
        d["csv_path"] = str(p)
    _num(cfg, "data", "burn_in", lo=7 if d["kind"] == "nlar" else 1, integer=True)
    _num(cfg, "data", "window", lo=1, integer=True)
    _num(cfg, "data", "M_l", lo=1, integer=True)
    _num(cfg, "data", "length", lo=2, integer=True)
    _num(cfg, "data", "horizon", lo=1, integer=True)
    _num(cfg, "data", "phi", lo=-1, hi=1)
    if abs(d["phi"]) >= 1:
        raise ConfigError("data.phi must satisfy |phi| < 1")
    _num(cfg, "data", "n_sequences", lo=1, integer=True, allow_none=True)
    _num(cfg, "data", "n", lo=1, integer=True, allow_none=True)
    if not isinstance(d["splits"], dict) or not d["splits"]:
        raise ConfigError("data.splits must be a non-empty object of sizes")
    for name, size in d["splits"].items():
        if name not in ("train", "val", "calibration", "test"):
            raise ConfigError(f"unknown split {name!r}")
        if isinstance(size, bool) or not isinstance(size, int) or size < 0:
            raise ConfigError(f"data.splits.{name} must be a non-negative integer")
    if d["splits"].get("train", 0) < 2:
        raise ConfigError("data.splits.train must be >= 2")
    if not isinstance(d["standardize"], bool):
        raise ConfigError("data.standardize must be true or false")

    m = cfg["model"]
    if m["kind"] not in ("rnn", "mlp"):
        raise ConfigError("model.kind must be rnn or mlp")
    if not isinstance(m["hidden"], list) or not all(isinstance(h, int) and h >= 1 for h in m["hidden"]):
        raise ConfigError("model.hidden must be a list of positive integers")
    if not isinstance(m["activations"], list) or len(m["activations"]) != len(m["hidden"]):
        raise ConfigError("model.activations needs one entry per hidden layer")
    if m["init"] not in ("fan_in", "hidden"):
        raise ConfigError("model.init must be fan_in or hidden")

    _num(cfg, "prior", "lambda_n", lo=0, hi=1, open_lo=True)
    if cfg["prior"]["lambda_n"] >= 1:
        raise ConfigError("prior.lambda_n must be < 1")
    _num(cfg, "prior", "sigma1_sq", lo=0, open_lo=True)
    _num(cfg, "prior", "sigma0_init_sq", lo=0, open_lo=True)
    _num(cfg, "prior", "sigma0_end_sq", lo=0, open_lo=True)
    _num(cfg, "prior", "target_sparsity", lo=0, hi=1, open_lo=True, allow_none=True)
    p = cfg["prior"]
    if not p["sigma1_sq"] > p["sigma0_init_sq"] >= p["sigma0_end_sq"]:
        raise ConfigError("need sigma1_sq > sigma0_init_sq >= sigma0_end_sq")

    s = cfg["schedule"]
    for k in ("T1", "T2", "T3"):
        _num(cfg, "schedule", k, lo=0, integer=True)
    if not s["T1"] < s["T2"] < s["T3"]:
        raise ConfigError("schedule needs T1 < T2 < T3")
    _num(cfg, "schedule", "temp_const", lo=0, open_lo=True)
    _num(cfg, "schedule", "base_temperature", lo=0, open_lo=True)

    t = cfg["train"]
    _num(cfg, "train", "lr", lo=0, open_lo=True)
    _num(cfg, "train", "momentum", lo=0, hi=1)
    if t["momentum"] >= 1:
        raise ConfigError("train.momentum must be < 1")
    _num(cfg, "train", "batch_size", lo=1, integer=True)
    _num(cfg, "train", "iterations", lo=0, integer=True)
    _num(cfg, "train", "refine_iterations", lo=0, integer=True)
    _num(cfg, "train", "refine_lr", lo=0, open_lo=True, allow_none=True)
    _num(cfg, "train", "gradient_clip", lo=0, open_lo=True, allow_none=True)
    if s["T1"] > t["iterations"]:
        raise ConfigError("schedule.T1 exceeds train.iterations")
    if not isinstance(t["prune_dead_units"], bool):
        raise ConfigError("train.prune_dead_units must be true or false")

    u = cfg["uq"]
    _num(cfg, "uq", "alpha", lo=0, hi=1, open_lo=True)
    if u["alpha"] >= 1:
        raise ConfigError("uq.alpha must be < 1")
    _num(cfg, "uq", "horizon", lo=1, integer=True, allow_none=True)
    h = u["hessian"]
    _num(u, "hessian", "fd_step", lo=0, open_lo=True)
    _num(u, "hessian", "jitter_start", lo=0, open_lo=True)
    _num(u, "hessian", "jitter_max", lo=0, open_lo=True)
    if h["method"] not in ("fd", "gauss_newton"):
        raise ConfigError("uq.hessian.method must be fd or gauss_newton")

    if cfg["checkpoint"] is not None:
        cp = Path(cfg["checkpoint"])
        if base_dir is not None and not cp.is_absolute():
            cp = base_dir / cp
        if not cp.exists():
            raise ConfigError(f"checkpoint {str(cp)!r} does not exist")
        cfg["checkpoint"] = str(cp)
    return cfg


def build(given: dict, base_dir=None) -> dict:
    """Merge ``given`` over the defaults and validate."""
    cfg = _merge(DEFAULTS, given, "")
    return validate(cfg, Path(base_dir) if base_dir is not None else None)


def load(path) -> dict:
    path = Path(path)
    try:
        given = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    return build(given, path.parent)
