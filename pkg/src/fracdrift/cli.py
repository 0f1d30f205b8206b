"""Batch runner: scenarios, kits, solver runs and regularity reports.

Exit status: 0 when every verdict passes, 2 on a hypothesis violation,
3 when a verdict fails, 1 on an internal or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, drifts
from .barrier import BarrierKit, BatteryConfig, build_battery, search_constants
from .config import (
    STOCK, STOCK_BATTERY, ConfigInvalid, HypothesisRejected, config_hash, dump, load, validate,
    with_seed,
)
from .core import Forcing, Grid, effective_radius, write_field
from .fracops import calibrated
from .flowmap import EnvelopeViolated, integrate_flow
from .regularity import (
    drift_bound_growth, iterate_oscillation, normalize, sweep_uniformity, theorem_check,
)
from .solver import Problem, vanishing_viscosity_sweep

log = logging.getLogger("fracdrift")

OUT_ENV = "FRACDRIFT_OUT"
EXIT_OK, EXIT_INTERNAL, EXIT_HYPOTHESIS, EXIT_VERDICT = 0, 1, 2, 3


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "out"))


# --- building blocks from a config ------------------------------------------------------

def build_drift(cfg: dict, grid: Grid):
    d = cfg["drift"]
    kind = d["kind"]
    if kind == "zero":
        return drifts.zero()
    if kind == "constant":
        return drifts.constant(d["value"])
    if kind == "rough_bounded":
        return drifts.rough_bounded(grid, d["sup_norm"], seed=d["seed"])
    return drifts.holder(grid, 1 - 2 * cfg["s"], d["seminorm"], seed=d["seed"],
                         base_wavenumber=d["base_wavenumber"])


def build_initial(cfg: dict, grid: Grid) -> np.ndarray:
    ini = cfg["initial"]
    if ini["kind"] == "cos":
        return np.cos(ini["wavenumber"] * grid.x)
    if ini["kind"] == "constant":
        return np.full(grid.n_points, float(ini["value"]))
    rng = np.random.default_rng(ini["seed"])
    k = np.arange(1, 9)
    amps = rng.standard_normal(k.size) / k
    phases = rng.uniform(0, 2 * np.pi, k.size)
    w = 2 * np.pi * k / grid.period
    return (amps[:, None] * np.cos(w[:, None] * grid.x[None, :] + phases[:, None])).sum(0)


def build_forcing(cfg: dict) -> Forcing:
    f = cfg["forcing"]
    return Forcing.zero() if f["kind"] == "zero" else Forcing.constant(f["value"])


def analysis_radius(cfg: dict, sup_norm_b: float) -> float:
    r = cfg["analysis"]["r"]
    return r if r is not None else 1.0 / (2 * effective_radius(cfg["s"], sup_norm_b))


def choose_dt(cfg: dict, grid: Grid, sup_norm_b: float, r: float) -> float:
    """Explicit dt, else the largest step that is CFL-safe and resolves the smallest cylinder."""
    if cfg["dt"] is not None:
        return float(cfg["dt"])
    depth = r ** (2 * cfg["s"] * cfg["analysis"]["K"])
    dt = min(1e-2, depth / 8)
    if sup_norm_b > 0:
        dt = min(dt, grid.h / (2 * sup_norm_b))
    return dt


def kit_cache_path(out_root: Path, s: float, A: float, mu: float) -> Path:
    return out_root / "kits" / f"kit_s{s:g}_A{A:g}_mu{mu:g}.json"


def obtain_kit(cfg: dict, out_root: Path) -> BarrierKit:
    k = cfg["kit"]
    if k["source"] == "file":
        return BarrierKit.from_json(json.loads(Path(k["path"]).read_text()))
    path = kit_cache_path(out_root, cfg["s"], k["A"], k["mu"])
    if path.exists():
        return BarrierKit.from_json(json.loads(path.read_text()))
    return calibrate_kit(cfg["s"], k["A"], k["mu"], out_root).kit


def calibrate_kit(s: float, A: float, mu: float, out_root: Path):
    calibrated(s)
    battery = build_battery(BatteryConfig.for_kit(s, A))
    result = search_constants(s, A, mu, battery=battery)
    path = kit_cache_path(out_root, s, A, mu)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.kit.write(path)
    return result


# --- a single run ------------------------------------------------------------------------

def _analyse(traj, cfg, b, f, kit, r):
    s = cfg["s"]
    a = cfg["analysis"]
    norm = normalize(traj.field, f, kit.eps0)
    flow = None
    flow_info = None
    if s < 0.5 and a["gauge"]:
        p = traj.problem
        flow = integrate_flow(b, p.t_span, min(p.dt_eff, 1e-3))
        flow_info = {"residual_norm": flow.residual_norm}
    it = iterate_oscillation(norm.field, b, f, s, kit,
                             flow=flow, K=a["K"], r=r, gauge=a["gauge"])
    out = {
        "eps_visc": traj.problem.eps_visc,
        "solver": {
            "steps": int(traj.step_times.size - 1),
            "dt": traj.problem.dt_eff,
            "cfl_margin": traj.problem.cfl_margin,
            "monotone_step": traj.monotone_step,
            "max_principle_ok": traj.max_principle_ok,
            "stored_levels": int(traj.field.times.size),
        },
        "normalization": {"scale": norm.scale, "forcing_sup": norm.forcing_sup,
                          "degenerate": norm.degenerate},
        "flow": flow_info,
        "iteration": it.to_json(),
        "fit": None,
        "theorem": None,
    }
    fit = None
    if it.resolved_levels >= 4:
        fit = it.fit(s)
        out["fit"] = fit.to_json()
        if fit.alpha_hat > 0:
            rep = theorem_check(norm.field, fit.alpha_hat, s, a["pair_budget"],
                                f_sup=norm.forcing_sup)
            out["theorem"] = rep.to_json()
    hyp_ok = all(v.hypotheses_ok for v in it.verdicts)
    passed = (
        it.all_passed and fit is not None and fit.alpha_hat > 0
        and out["theorem"] is not None and out["theorem"]["theorem_pass"]
    )
    out["hypotheses_ok"] = bool(hyp_ok)
    out["pass"] = bool(passed)
    return out, it, norm


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _clean(obj):
    """Round-trip through JSON so the report holds only plain types; NaN becomes null."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def run(cfg: dict, out_root: Path = None, write_trajectory: bool = True) -> tuple:
    """Execute one experiment; returns ``(report, exit_code, out_dir)``."""
    out_root = default_out() if out_root is None else Path(out_root)
    cfg = validate(cfg)
    t_start = time.perf_counter()
    h = config_hash(cfg)
    out_dir = out_root / cfg["scenario"] / h
    out_dir.mkdir(parents=True, exist_ok=True)

    grid = Grid(cfg["grid"]["L"], int(cfg["grid"]["n_points"]))
    b = build_drift(cfg, grid)
    f = build_forcing(cfg)
    r = analysis_radius(cfg, b.sup_norm)
    dt = choose_dt(cfg, grid, b.sup_norm, r)
    kit = obtain_kit(cfg, out_root)
    problem = Problem(cfg["s"], grid, b, build_initial(cfg, grid), f=f,
                      eps_visc=cfg["eps_visc"][0], t_span=tuple(cfg["t_span"]), dt=dt,
                      store="geometric")
    trajs = vanishing_viscosity_sweep(problem, cfg["eps_visc"])

    runs, iterations = [], []
    for traj in trajs:
        try:
            res, it, _ = _analyse(traj, cfg, b, f, kit, r)
        except EnvelopeViolated as exc:
            res, it = {"eps_visc": traj.problem.eps_visc, "error": str(exc),
                       "hypotheses_ok": False, "pass": False}, None
        runs.append(res)
        iterations.append(it)

    verdict = {
        "hypotheses_ok": all(r_["hypotheses_ok"] for r_ in runs),
        "pass": all(r_["pass"] for r_ in runs),
    }
    if len(runs) > 1:
        fits = [it.fit(cfg["s"]) if it is not None and it.resolved_levels >= 4 else None
                for it in iterations]
        uni = sweep_uniformity(fits)
        verdict["viscosity_uniform"] = uni["uniform"]
        verdict["alpha_ratio"] = uni["alpha_ratio"]
        verdict["C_ratio"] = uni["C_ratio"]
        verdict["pass"] = verdict["pass"] and uni["uniform"]
    if s_lt_half_nogauge(cfg) and iterations[0] is not None:
        verdict["drift_bound_growth"] = drift_bound_growth(iterations[0])
        verdict["growth_floor"] = r ** (2 * cfg["s"] - 1)

    report = {
        "tool_version": __version__,
        "config": cfg,
        "config_hash": h,
        "kit": kit.to_json(),
        "drift": {"kind": b.kind, "sup_norm": b.sup_norm, "holder_seminorm": b.holder_seminorm,
                  "holder_exponent": b.holder_exponent},
        "r": r,
        "runs": runs,
        "verdict": verdict,
        "timing": {"seconds": round(time.perf_counter() - t_start, 3)},
    }
    report = _clean(json.loads(json.dumps(report, default=_json_default)))
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    kit.write(out_dir / "kit.json")
    for i, it in enumerate(iterations):
        if it is not None:
            it.write_csv(out_dir / ("decay.csv" if i == 0 else f"decay_{i}.csv"))
    if write_trajectory:
        write_field(out_dir / "trajectory.bin", trajs[0].field, cfg["s"])

    if not verdict["hypotheses_ok"]:
        code = EXIT_HYPOTHESIS
    elif not verdict["pass"]:
        code = EXIT_VERDICT
    else:
        code = EXIT_OK
    return report, code, out_dir


def s_lt_half_nogauge(cfg: dict) -> bool:
    return cfg["s"] < 0.5 and not cfg["analysis"]["gauge"]


# --- batteries ---------------------------------------------------------------------------

SUMMARY_COLUMNS = ("scenario", "s", "alpha_hat", "theta", "levels_passed", "levels_total",
                   "theorem_pass", "pass", "exit_code", "error")


def _summary_row(report, code, err=None, scenario="?", s=None) -> dict:
    if report is None:
        return {"scenario": scenario, "s": s, "alpha_hat": None, "theta": None,
                "levels_passed": 0, "levels_total": 0, "theorem_pass": False, "pass": False,
                "exit_code": code, "error": err}
    run0 = report["runs"][0]
    verdicts = (run0.get("iteration") or {}).get("verdicts", [])
    fit = run0.get("fit") or {}
    theorem = run0.get("theorem") or {}
    return {
        "scenario": report["config"]["scenario"], "s": report["config"]["s"],
        "alpha_hat": fit.get("alpha_hat"), "theta": report["kit"]["theta"],
        "levels_passed": sum(v["passed"] for v in verdicts), "levels_total": len(verdicts),
        "theorem_pass": theorem.get("theorem_pass", False), "pass": report["verdict"]["pass"],
        "exit_code": code, "error": "",
    }


def run_battery(configs: list, out_root: Path = None, jobs: int = 1,
                write_trajectory: bool = True) -> tuple:
    """Run configs concurrently; failures are collected per config, never fatal.

    Returns ``(rows, reports)`` and writes ``summary.csv`` under the output root.
    """
    if not configs:
        raise ValueError("battery needs at least one config")
    out_root = default_out() if out_root is None else Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)

    # kits are shared by configs with equal (s, A, mu); build each once up front
    for cfg in configs:
        try:
            cfg = validate(cfg)
        except ConfigInvalid:
            continue
        if cfg["kit"]["source"] == "search":
            obtain_kit(cfg, out_root)

    def one(cfg):
        scenario = cfg.get("scenario", "?") if isinstance(cfg, dict) else "?"
        try:
            report, code, _ = run(cfg, out_root, write_trajectory)
            return _summary_row(report, code), report
        except HypothesisRejected as exc:
            return _summary_row(None, EXIT_HYPOTHESIS, str(exc), scenario, cfg.get("s")), None
        except Exception as exc:  # collected, reported per row
            log.exception("config %s failed", scenario)
            return _summary_row(None, EXIT_INTERNAL, f"{type(exc).__name__}: {exc}", scenario,
                                cfg.get("s") if isinstance(cfg, dict) else None), None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(one, configs))
    else:
        results = [one(c) for c in configs]
    rows = [r for r, _ in results]
    with open(out_root / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return rows, [rep for _, rep in results]


def list_scenarios() -> list:
    return [(sid, sc.summary) for sid, sc in STOCK.items()]


# --- command line --------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracdrift", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=Path, default=None,
                        help=f"output root (default ${OUT_ENV} or ./out)")
        sp.add_argument("--seed", type=int, default=None, help="override drift/initial seeds")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--no-trajectory", action="store_true",
                        help="skip writing trajectory.bin")

    sp = sub.add_parser("run", help="run one experiment")
    sp.add_argument("--config", type=Path, help="YAML config file")
    sp.add_argument("--scenario", choices=sorted(STOCK), help="stock scenario id")
    common(sp)

    sp = sub.add_parser("battery", help="run several experiments")
    sp.add_argument("--config", type=Path, nargs="*", default=[], help="YAML config files")
    sp.add_argument("--stock", action="store_true", help="add the stock battery")
    common(sp)

    sp = sub.add_parser("scenarios", help="list stock scenarios")
    sp.add_argument("--dump", type=Path, default=None, help="write each stock config as YAML here")

    sp = sub.add_parser("calibrate", help="calibrate quadrature and search barrier constants")
    sp.add_argument("--s", type=float, default=0.5)
    sp.add_argument("--A", type=float, default=1.0)
    sp.add_argument("--mu", type=float, default=1.0)
    sp.add_argument("--out", type=Path, default=None)
    return p


def _load_config(args) -> dict:
    if args.config is not None:
        cfg = load(args.config)
    elif args.scenario is not None:
        cfg = STOCK[args.scenario].config()
    else:
        raise ConfigInvalid("<cli>", "give --config or --scenario")
    return with_seed(cfg, args.seed) if args.seed is not None else cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "scenarios":
            for sid, summary in list_scenarios():
                print(f"{sid:28s} {summary}")
            if args.dump is not None:
                args.dump.mkdir(parents=True, exist_ok=True)
                for sid, sc in STOCK.items():
                    dump(sc.config(), args.dump / f"{sid}.yaml")
            return EXIT_OK
        if args.command == "calibrate":
            out = args.out or default_out()
            res = calibrate_kit(args.s, args.A, args.mu, out)
            print(json.dumps(res.kit.to_json(), indent=2, sort_keys=True))
            return EXIT_OK
        out = args.out or default_out()
        if args.command == "run":
            report, code, out_dir = run(_load_config(args), out, not args.no_trajectory)
            print(f"{report['config']['scenario']}: pass={report['verdict']['pass']} "
                  f"hypotheses_ok={report['verdict']['hypotheses_ok']} -> {out_dir}")
            return code
        configs = [load(p) for p in args.config]
        if args.stock:
            configs += [STOCK[sid].config() for sid in STOCK_BATTERY]
        if args.seed is not None:
            configs = [with_seed(c, args.seed) for c in configs]
        rows, _ = run_battery(configs, out, args.jobs, not args.no_trajectory)
        for row in rows:
            print(",".join("" if row[c] is None else str(row[c]) for c in SUMMARY_COLUMNS))
        codes = [row["exit_code"] for row in rows]
        if EXIT_INTERNAL in codes:
            return EXIT_INTERNAL
        if EXIT_HYPOTHESIS in codes:
            return EXIT_HYPOTHESIS
        return EXIT_VERDICT if any(c == EXIT_VERDICT for c in codes) else EXIT_OK
    except HypothesisRejected as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except ConfigInvalid as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
