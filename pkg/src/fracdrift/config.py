"""Experiment configuration: YAML schema, validation and the stock scenarios."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

SCHEMA_VERSION = 1

DRIFT_KINDS = ("zero", "constant", "rough_bounded", "holder")
INITIAL_KINDS = ("cos", "random", "constant")
FORCING_KINDS = ("zero", "constant")
KIT_SOURCES = ("search", "file")


class ConfigInvalid(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class HypothesisRejected(ConfigInvalid):
    """The drift class does not meet the hypothesis required for this ``s``."""


DEFAULTS = {
    "schema": SCHEMA_VERSION,
    "scenario": "custom",
    "s": 0.5,
    "grid": {"L": 4 * math.pi, "n_points": 4096},
    "t_span": [-2.0, 0.0],
    "dt": None,
    "initial": {"kind": "random", "seed": 1, "wavenumber": 1, "value": 0.0},
    "drift": {"kind": "zero", "sup_norm": 1.0, "seminorm": 1.0, "seed": 0, "value": 0.0,
              "base_wavenumber": 8},
    "forcing": {"kind": "zero", "value": 0.0},
    "eps_visc": [0.0],
    "analysis": {"r": None, "K": 3, "anchor": [0.0, 0.0], "pair_budget": 2048, "gauge": True},
    "kit": {"source": "search", "path": None, "A": 1.0, "mu": 1.0},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigInvalid(where, "unknown field")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigInvalid(where, "expected a mapping")
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = v
    return out


def _num(cfg, path, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False, integer=False):
    node = cfg
    for key in path.split("."):
        node = node[key]
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigInvalid(path, f"expected a number, got {node!r}")
    if integer and int(node) != node:
        raise ConfigInvalid(path, "expected an integer")
    bad_lo = node <= lo if lo_open else node < lo
    bad_hi = node >= hi if hi_open else node > hi
    if bad_lo or bad_hi or not math.isfinite(node):
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigInvalid(path, f"{node} outside {lb}{lo}, {hi}{rb}")
    return node


def _choice(value, path, options):
    if value not in options:
        raise ConfigInvalid(path, f"{value!r} not one of {options}")


def validate(raw: dict) -> dict:
    """Fill defaults and check every field; returns the normalized config."""
    if not isinstance(raw, dict):
        raise ConfigInvalid("<root>", "config must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    if cfg["schema"] != SCHEMA_VERSION:
        raise ConfigInvalid("schema", f"unsupported schema {cfg['schema']}")
    if not isinstance(cfg["scenario"], str) or not cfg["scenario"]:
        raise ConfigInvalid("scenario", "must be a nonempty string")
    s = _num(cfg, "s", 0, 1, lo_open=True, hi_open=True)
    _num(cfg, "grid.L", 0, lo_open=True)
    n = _num(cfg, "grid.n_points", 16, 2**22, integer=True)
    if int(n) & (int(n) - 1):
        raise ConfigInvalid("grid.n_points", "must be a power of two")
    ts = cfg["t_span"]
    if not (isinstance(ts, list) and len(ts) == 2 and all(isinstance(v, (int, float)) for v in ts)):
        raise ConfigInvalid("t_span", "expected [t_start, t_end]")
    if not ts[0] <= ts[1] - 1:
        raise ConfigInvalid("t_span", "must span at least one time unit")
    if cfg["dt"] is not None:
        _num(cfg, "dt", 0, 1, lo_open=True)
    _choice(cfg["initial"]["kind"], "initial.kind", INITIAL_KINDS)
    _num(cfg, "initial.seed", 0, integer=True)
    _num(cfg, "initial.wavenumber", 1, integer=True)
    _num(cfg, "initial.value", -1e6, 1e6)
    if cfg["initial"]["kind"] == "cos":
        turns = cfg["initial"]["wavenumber"] * cfg["grid"]["L"] / (2 * math.pi)
        if abs(turns - round(turns)) > 1e-9:
            raise ConfigInvalid("initial.wavenumber", "cos(k x) must be periodic on the grid")

    d = cfg["drift"]
    _choice(d["kind"], "drift.kind", DRIFT_KINDS)
    _num(cfg, "drift.sup_norm", 0)
    _num(cfg, "drift.seminorm", 0, lo_open=True)
    _num(cfg, "drift.seed", 0, integer=True)
    _num(cfg, "drift.value", -1e3, 1e3)
    _num(cfg, "drift.base_wavenumber", 1, integer=True)
    if s < 0.5 and d["kind"] not in ("zero", "constant", "holder"):
        raise HypothesisRejected("drift.kind", f"s = {s} < 1/2 requires a Hoelder drift, got {d['kind']}")

    _choice(cfg["forcing"]["kind"], "forcing.kind", FORCING_KINDS)
    _num(cfg, "forcing.value", -1e3, 1e3)
    eps = cfg["eps_visc"]
    if not isinstance(eps, list) or not eps:
        raise ConfigInvalid("eps_visc", "expected a nonempty list")
    for i, e in enumerate(eps):
        if isinstance(e, bool) or not isinstance(e, (int, float)) or e < 0:
            raise ConfigInvalid(f"eps_visc[{i}]", "must be a nonnegative number")
    if any(a <= b for a, b in zip(eps, eps[1:])):
        raise ConfigInvalid("eps_visc", "must be strictly descending")

    a = cfg["analysis"]
    if a["r"] is not None:
        _num(cfg, "analysis.r", 0, 1, lo_open=True, hi_open=True)
    _num(cfg, "analysis.K", 3, 12, integer=True)
    _num(cfg, "analysis.pair_budget", 16, 2**20, integer=True)
    if not isinstance(a["gauge"], bool):
        raise ConfigInvalid("analysis.gauge", "expected true/false")
    anc = a["anchor"]
    if not (isinstance(anc, list) and len(anc) == 2):
        raise ConfigInvalid("analysis.anchor", "expected [x, t]")

    k = cfg["kit"]
    _choice(k["source"], "kit.source", KIT_SOURCES)
    if k["source"] == "file" and not k["path"]:
        raise ConfigInvalid("kit.path", "required when kit.source is 'file'")
    _num(cfg, "kit.A", 0)
    _num(cfg, "kit.mu", 0, 2, lo_open=True)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def load(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return validate(raw or {})


def dump(cfg: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=True))


def with_seed(cfg: dict, seed: int) -> dict:
    out = copy.deepcopy(cfg)
    out["drift"]["seed"] = int(seed)
    out["initial"]["seed"] = int(seed)
    return validate(out)


# --- stock scenarios ------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    sid: str
    summary: str
    overrides: dict

    def config(self) -> dict:
        return validate(dict(self.overrides, scenario=self.sid))


_L = 4 * math.pi

STOCK = {
    sc.sid: sc for sc in (
        Scenario("heat_reference", "b = 0, f = 0, u0 = cos x, s = 1/2", {
            "s": 0.5, "grid": {"L": _L, "n_points": 4096},
            "initial": {"kind": "cos", "wavenumber": 1},
            "drift": {"kind": "zero"}, "analysis": {"K": 3},
        }),
        Scenario("constant_state", "u identically zero, no drift or forcing", {
            "s": 0.5, "grid": {"L": _L, "n_points": 4096},
            "initial": {"kind": "constant", "value": 0.0},
            "drift": {"kind": "zero"}, "analysis": {"K": 3},
        }),
        Scenario("critical_rough", "s = 1/2 with a bounded rough drift", {
            "s": 0.5, "grid": {"L": _L, "n_points": 16384},
            "drift": {"kind": "rough_bounded", "sup_norm": 1.0, "seed": 3},
            "analysis": {"K": 3},
        }),
        Scenario("subcritical_rough", "s = 3/4 with a bounded rough drift", {
            "s": 0.75, "grid": {"L": _L, "n_points": 8192},
            "drift": {"kind": "rough_bounded", "sup_norm": 0.5, "seed": 4},
            "analysis": {"K": 3}, "kit": {"A": 0.5},
        }),
        Scenario("supercritical_holder", "s = 1/4, Hoelder drift, moving frame", {
            "s": 0.25, "grid": {"L": _L, "n_points": 8192},
            "drift": {"kind": "holder", "seminorm": 1.0, "seed": 1, "base_wavenumber": 16},
            "analysis": {"K": 4, "gauge": True},
        }),
        Scenario("supercritical_nogauge", "same as supercritical_holder without the moving frame", {
            "s": 0.25, "grid": {"L": _L, "n_points": 8192},
            "drift": {"kind": "holder", "seminorm": 1.0, "seed": 1, "base_wavenumber": 16},
            "analysis": {"K": 4, "gauge": False},
        }),
        Scenario("vanishing_viscosity_sweep", "critical_rough across eps = 0.1 .. 0", {
            "s": 0.5, "grid": {"L": _L, "n_points": 16384},
            "drift": {"kind": "rough_bounded", "sup_norm": 1.0, "seed": 3},
            "eps_visc": [0.1, 0.01, 0.001, 0.0], "analysis": {"K": 3},
        }),
    )
}

# the diagnostic run without the moving frame is left out of the default battery
STOCK_BATTERY = tuple(sid for sid in STOCK if sid != "supercritical_nogauge")
