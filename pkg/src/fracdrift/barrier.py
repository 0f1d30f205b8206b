"""Comparison objects for the point estimate and their empirical calibration.

The barrier is ``1 - m(t) eta(x, t) + eps0 (2 + t)`` with a shrinking bump
``eta(x, t) = beta(|x| + A t)`` and a weight ``m`` driven by the measure of
the set where ``u <= 0`` inside the unit ball.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .core import Grid, Field, effective_radius, as_order
from .fracops import QuadratureScheme, Tail, calibrated, frac_lap_quadrature, inequality_residual
from .solver import Problem, Trajectory, solve
from . import drifts

log = logging.getLogger(__name__)

UNIT_BALL = 2.0                 # |B_1| in one dimension
CYLINDER_MEASURE = UNIT_BALL    # |B_1 x [-2, -1]|
SCAN_TIMES = (-2.0, -1.5, -1.0, -0.5, 0.0)
THETA_FLOOR = 1e-4
EPS0_MAX = 0.1
STORE_SPACING = 5e-3


class NoValidLevel(RuntimeError):
    pass


class SearchExhausted(RuntimeError):
    pass


class HypothesisViolated(ValueError):
    pass


# --- bump ----------------------------------------------------------------------

def _phi(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    pos = z > 0
    out[pos] = np.exp(-1.0 / z[pos])
    return out


@dataclass(frozen=True)
class BumpProfile:
    """Smooth nonincreasing step: 1 on ``x <= 1``, 0 on ``x >= 2``.

    On ``(1, 2)`` it is ``1 - phi(z) / (phi(z) + phi(1 - z))`` with
    ``z = x - 1`` and ``phi(z) = exp(-1/z)``, which is C-infinity.
    """

    bump_id: str = "smoothstep-exp"

    def __call__(self, x):
        z = np.asarray(x, dtype=float) - 1.0
        a, b = _phi(z), _phi(1.0 - z)
        return 1.0 - a / (a + b)

    def derivative(self, x):
        z = np.asarray(x, dtype=float) - 1.0
        a, b = _phi(z), _phi(1.0 - z)
        inside = (z > 0) & (z < 1)
        zi = np.where(inside, z, 0.5)
        da = np.where(inside, a / zi**2, 0.0)
        db = np.where(inside, -b / (1 - zi) ** 2, 0.0)
        den = np.where(inside, (a + b) ** 2, 1.0)
        return -np.where(inside, (da * b - a * db) / den, 0.0)

    def sup_derivative(self) -> float:
        z = np.linspace(1.0, 2.0, 20001)
        return float(np.max(np.abs(self.derivative(z))))


# --- kit -----------------------------------------------------------------------

@dataclass(frozen=True)
class BarrierKit:
    s: float
    A: float
    mu: float
    c0: float
    C1: float
    eps0: float
    beta1: Optional[float] = None
    bump: BumpProfile = field(default_factory=BumpProfile)
    battery_hash: str = ""

    def __post_init__(self):
        as_order(self.s)
        if self.A < 0:
            raise ValueError("speed A must be nonnegative")
        if not 0 < self.mu <= CYLINDER_MEASURE:
            raise ValueError(f"mu must lie in (0, {CYLINDER_MEASURE}]")
        if not (self.c0 > 0 and self.C1 > 0 and self.eps0 > 0):
            raise ValueError("c0, C1 and eps0 must be positive")
        if self.beta1 is not None and not 0 < self.beta1 < 1:
            raise ValueError("beta1 must lie in (0, 1)")

    @property
    def theta(self) -> float:
        return self.c0 * math.exp(-2 * self.C1) * self.mu / 2

    @property
    def sup_m_bound(self) -> float:
        """Largest possible ``m`` when the good set fills the unit ball at all times."""
        return self.c0 * UNIT_BALL * (1 - math.exp(-2 * self.C1)) / self.C1

    def to_json(self) -> dict:
        return {"s": self.s, "A": self.A, "mu": self.mu, "c0": self.c0, "C1": self.C1,
                "eps0": self.eps0, "theta": self.theta, "beta1": self.beta1,
                "bump_id": self.bump.bump_id, "battery_hash": self.battery_hash}

    @classmethod
    def from_json(cls, d: dict) -> "BarrierKit":
        kit = cls(s=d["s"], A=d["A"], mu=d["mu"], c0=d["c0"], C1=d["C1"], eps0=d["eps0"],
                  beta1=d.get("beta1"), bump=BumpProfile(d.get("bump_id", "smoothstep-exp")),
                  battery_hash=d.get("battery_hash", ""))
        if "theta" in d and not math.isclose(kit.theta, d["theta"], rel_tol=1e-12):
            raise ValueError("stored theta disagrees with c0 exp(-2 C1) mu / 2")
        return kit

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)


def eta(x, t, kit) -> np.ndarray:
    """Shrinking bump ``beta(|x| + A t)`` for ``t <= 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t > 0):
        raise ValueError("eta is only defined for t <= 0")
    return kit.bump(np.abs(np.asarray(x, dtype=float)) + kit.A * t)


# --- good-set measure and m(t) ------------------------------------------------------

def ball_weights(grid: Grid, radius: float = 1.0) -> np.ndarray:
    """Length of each sample's cell ``[x - h/2, x + h/2]`` inside ``[-radius, radius]``."""
    h = grid.h
    lo = np.maximum(grid.x - h / 2, -radius)
    hi = np.minimum(grid.x + h / 2, radius)
    return np.clip(hi - lo, 0.0, h)


@dataclass(frozen=True, eq=False)
class MeasureSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be matching 1-D arrays")
        if np.any(v < -1e-15) or np.any(v > UNIT_BALL + 1e-12):
            raise ValueError("measures must lie in [0, |B_1|]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_field(cls, u: Field) -> "MeasureSeries":
        w = ball_weights(u.grid)
        return cls(u.times, (u.values <= 0) @ w)

    @classmethod
    def constant(cls, value: float, times) -> "MeasureSeries":
        times = np.asarray(times, dtype=float)
        return cls(times, np.full(times.shape, float(value)))

    def integral(self, t_lo: float, t_hi: float) -> float:
        """Trapezoid of the measure over ``[t_lo, t_hi]`` (stored levels only)."""
        sel = (self.times >= t_lo - 1e-12) & (self.times <= t_hi + 1e-12)
        if sel.sum() < 2:
            return 0.0
        return float(trapezoid(self.values[sel], self.times[sel]))


@dataclass(frozen=True, eq=False)
class MFunction:
    times: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.times, self.values)


def solve_m(measure: MeasureSeries, c0: float, C1: float) -> MFunction:
    """``m(t) = int_{-2}^t c0 measure(sigma) exp(-C1 (t - sigma)) d sigma`` by trapezoid."""
    if not (c0 > 0 and C1 > 0):
        raise ValueError("c0 and C1 must be positive")
    t, g = measure.times, measure.values
    m = np.zeros_like(t)
    for i in range(1, t.size):
        d = t[i] - t[i - 1]
        decay = math.exp(-C1 * d)
        m[i] = m[i - 1] * decay + 0.5 * c0 * d * (g[i - 1] * decay + g[i])
    return MFunction(t, m)


# --- the level beta1 ------------------------------------------------------------

@dataclass(frozen=True)
class Beta1Certificate:
    level: float
    threshold: float
    s: float
    A: float
    n_scan: int
    levels: int
    times: tuple = SCAN_TIMES
    worst_value: float = 0.0


class _EtaSlice:
    def __init__(self, bump, A, t):
        self.bump, self.shift = bump, A * t

    def __call__(self, z):
        return self.bump(np.abs(z) + self.shift)


def _eta_lap(bump, A, t, s, q, x):
    support = 2.0 - A * t
    return frac_lap_quadrature(_EtaSlice(bump, A, t), np.asarray(x, dtype=float), s, q,
                               Tail.compact(support))


def _scan(bump, A, s, q, n_scan, times):
    """Per time: (|x| samples, eta values, fractional Laplacian values)."""
    out = []
    for t in times:
        support = 2.0 - A * t
        x = np.linspace(0.0, support + 1.0, n_scan)
        out.append((t, x, _EtaSlice(bump, A, t)(x), _eta_lap(bump, A, t, s, q, x)))
    return out


def find_beta1(kit, s=None, q: Optional[QuadratureScheme] = None, n_scan: int = 400,
               levels: int = 10, times: Sequence[float] = SCAN_TIMES) -> Beta1Certificate:
    """Largest level ``k / 2**levels`` below which ``(-Delta)^s eta <= 0`` on the scan.

    Sign changes of the scanned values are refined with Brent's method, so
    the threshold is the eta value at the true crossing, not a grid value.
    """
    s = kit.s if s is None else as_order(s).s
    q = calibrated(s) if q is None or not q.calibrated else q
    bump, A = kit.bump, kit.A
    threshold = math.inf
    for t, x, et, lap in _scan(bump, A, s, q, n_scan, times):
        bad = lap > 0
        if bad.any():
            threshold = min(threshold, float(et[bad].min()))
        for i in np.flatnonzero(np.diff(np.sign(lap)) != 0):
            a, b = x[i], x[i + 1]
            root = brentq(lambda z: _eta_lap(bump, A, t, s, q, np.array([z]))[0], a, b, xtol=1e-13)
            # the level must stay strictly below eta at any crossing
            threshold = min(threshold, float(_EtaSlice(bump, A, t)(np.array([root]))[0]))
    scale = 2**levels
    level = math.floor(min(threshold, 1.0) * scale) / scale
    if level >= threshold:
        level -= 1 / scale
    if level <= 0:
        raise NoValidLevel(f"(-Delta)^s eta > 0 already at eta = {threshold:.3g}")
    worst = verify_beta1(kit, level, s, q, n_scan, times)
    if worst > 0:
        raise NoValidLevel(f"level {level} fails its own scan (max {worst:.3g})")
    return Beta1Certificate(level, threshold, s, A, n_scan, levels, tuple(times), worst)


def verify_beta1(kit, level: float, s=None, q=None, n_scan: int = 400,
                 times: Sequence[float] = SCAN_TIMES) -> float:
    """Max of ``(-Delta)^s eta`` over scanned points with ``eta <= level`` (<= 0 certifies)."""
    s = kit.s if s is None else as_order(s).s
    q = calibrated(s) if q is None or not q.calibrated else q
    worst = -math.inf
    for t, x, et, lap in _scan(kit.bump, kit.A, s, q, n_scan, times):
        sel = et <= level
        if sel.any():
            worst = max(worst, float(lap[sel].max()))
    return worst


# --- verification on trajectories ----------------------------------------------------

def _window(u: Field, t_lo: float, t_hi: float):
    sel = (u.times >= t_lo - 1e-9) & (u.times <= t_hi + 1e-9)
    return sel


@dataclass(frozen=True)
class Hypotheses:
    u_max: float
    residual_max: float
    mu_measured: float
    domain_ok: bool
    ceiling_ok: bool
    residual_ok: bool
    mu_ok: bool

    @property
    def ok(self) -> bool:
        return self.ceiling_ok and self.residual_ok and self.mu_ok and self.domain_ok

    def violated(self) -> list:
        names = ("domain_ok", "ceiling_ok", "residual_ok", "mu_ok")
        return [n for n in names if not getattr(self, n)]


def check_hypotheses(traj: Trajectory, kit: BarrierKit, tol: float = 1e-12) -> Hypotheses:
    u = traj.field
    p = traj.problem
    sel = _window(u, -2.0, 0.0)
    if u.times[0] > -2.0 + 1e-9 or u.times[-1] < -1e-9:
        raise HypothesisViolated("trajectory must cover [-2, 0]")
    u_max = float(u.values[sel].max())
    res = inequality_residual(u, kit.A, kit.s, p.eps_visc)
    rsel = _window(res, -2.0, 0.0)
    res_max = float(res.values[rsel].max())
    mu_measured = MeasureSeries.from_field(u).integral(-2.0, -1.0)
    R = effective_radius(kit.s, kit.A)
    return Hypotheses(
        u_max=u_max,
        residual_max=res_max,
        mu_measured=mu_measured,
        domain_ok=u.grid.half_width >= 2 * R,
        ceiling_ok=u_max <= 1 + tol,
        residual_ok=res_max <= kit.eps0,
        mu_ok=mu_measured >= kit.mu,
    )


@dataclass(frozen=True)
class GapReport:
    gap: float
    argmin: tuple
    hypotheses: Hypotheses


def supersolution_gap(traj: Trajectory, kit: BarrierKit, strict: bool = True) -> GapReport:
    """Min over ``B_1 x [-1, 0]`` of ``1 - m eta + eps0 (2 + t) - u``."""
    hyp = check_hypotheses(traj, kit)
    if strict and not (hyp.ceiling_ok and hyp.residual_ok):
        raise HypothesisViolated(
            f"violated {hyp.violated()}: u_max={hyp.u_max:.4g}, residual={hyp.residual_max:.4g}"
        )
    return _gap(traj.field, kit, hyp)


def _gap(u: Field, kit: BarrierKit, hyp) -> GapReport:
    m = solve_m(MeasureSeries.from_field(u), kit.c0, kit.C1)
    tsel = _window(u, -1.0, 0.0)
    xsel = np.abs(u.x) <= 1.0 + 1e-12
    t = u.times[tsel]
    x = u.x[xsel]
    barrier = 1 - m(t)[:, None] * eta(x[None, :], np.minimum(t, 0)[:, None], kit) \
        + kit.eps0 * (2 + t)[:, None]
    gap = barrier - u.values[np.ix_(tsel, xsel)]
    i, j = np.unravel_index(np.argmin(gap), gap.shape)
    return GapReport(float(gap[i, j]), (float(x[j]), float(t[i])), hyp)


@dataclass(frozen=True)
class PointVerdict:
    hypotheses_ok: bool
    violated: list
    mu_measured: float
    theta_required: float
    max_u_on_Q: float
    passed: bool

    def to_json(self) -> dict:
        return asdict(self)


def max_on_unit_cylinder(u: Field) -> float:
    tsel = _window(u, -1.0, 0.0)
    xsel = np.abs(u.x) <= 1.0 + 1e-12
    return float(u.values[np.ix_(tsel, xsel)].max())


def verify_point_estimate(traj: Trajectory, kit: BarrierKit) -> PointVerdict:
    hyp = check_hypotheses(traj, kit)
    top = max_on_unit_cylinder(traj.field)
    return PointVerdict(hyp.ok, hyp.violated(), hyp.mu_measured, kit.theta, top,
                        top <= 1 - kit.theta)


# --- calibration battery and the constant search --------------------------------------

@dataclass(frozen=True)
class BatteryConfig:
    s: float = 0.5
    A: float = 1.0
    period: float = 4 * math.pi
    n_points: int = 4096
    n_members: int = 24
    seed: int = 0
    eps_visc: float = 0.0
    max_candidates: int = 400

    @classmethod
    def for_kit(cls, s, A: float, **kw) -> "BatteryConfig":
        """Default battery, on a torus wide enough for the domain hypothesis at ``(s, A)``.

        The period doubles (with the point count, so ``h`` is kept) until the
        half width reaches ``2 R``.
        """
        cfg = cls(s=as_order(s).s, A=A, **kw)
        need = 2 * effective_radius(cfg.s, A)
        period, n = cfg.period, cfg.n_points
        while period / 2 < need:
            period, n = 2 * period, 2 * n
        return replace(cfg, period=period, n_points=n)


def _initial_profile(grid: Grid, rng) -> np.ndarray:
    """Smooth random data squashed below 1 by ``tanh``."""
    k = np.arange(1, 9)
    amps = rng.standard_normal(k.size) / k
    phases = rng.uniform(0, 2 * np.pi, k.size)
    w = 2 * np.pi * k / grid.period
    g = (amps[:, None] * np.cos(w[:, None] * grid.x[None, :] + phases[:, None])).sum(0)
    g = g / np.max(np.abs(g))
    return np.tanh(rng.uniform(1.5, 3.5) * g + rng.uniform(-0.8, 0.8))


@dataclass(frozen=True, eq=False)
class Battery:
    config: BatteryConfig
    members: tuple
    seeds: tuple
    rejected: int
    digest: str

    def __len__(self):
        return len(self.members)


def member_problem(cfg: BatteryConfig, seed: int) -> Problem:
    grid = Grid(cfg.period, cfg.n_points)
    rng = np.random.default_rng([cfg.seed, seed])
    u0 = _initial_profile(grid, rng)
    b = drifts.rough_bounded(grid, cfg.A, seed=int(rng.integers(2**31)))
    dt = min(1e-2, grid.h / (2 * max(b.sup_norm, 1e-300)))
    # for s > 1/2 the initial layer is stiff; refine steps so the residual stays small
    dt = dt / 16 if cfg.s > 0.5 else dt
    # stored levels about STORE_SPACING apart keep a 24-member battery in memory
    stride = max(1, int(round(STORE_SPACING / dt)))
    # the initial layer is kept at full resolution so its time derivative is not aliased
    return Problem(cfg.s, grid, b, u0, t_span=(-2.0, 0.0), dt=dt, eps_visc=cfg.eps_visc,
                   dense_window=0.0, coarse_stride=stride, head_window=10 * STORE_SPACING)


def _digest(cfg: BatteryConfig, seeds, members) -> str:
    h = hashlib.sha256(json.dumps(asdict(cfg), sort_keys=True).encode())
    h.update(json.dumps(list(seeds)).encode())
    for tr in members:
        h.update(np.ascontiguousarray(tr.field.values[-1]).tobytes())
    return h.hexdigest()[:16]


def build_battery(cfg: BatteryConfig = BatteryConfig()) -> Battery:
    """Seeded trajectories whose good set covers at least half the cylinder ``B_1 x [-2,-1]``.

    Candidates failing the measure condition are skipped (and counted).
    """
    need = 0.5 * CYLINDER_MEASURE
    members, seeds, rejected = [], [], 0
    for seed in range(cfg.max_candidates):
        if len(members) == cfg.n_members:
            break
        tr = solve(member_problem(cfg, seed))
        if MeasureSeries.from_field(tr.field).integral(-2.0, -1.0) < need:
            rejected += 1
            continue
        members.append(tr)
        seeds.append(seed)
    if len(members) < cfg.n_members:
        raise SearchExhausted(f"only {len(members)} admissible battery members")
    return Battery(cfg, tuple(members), tuple(seeds), rejected, _digest(cfg, seeds, members))


@dataclass(frozen=True)
class SearchGrid:
    c0: tuple = tuple(float(v) for v in np.geomspace(1e-3, 0.5, 19))
    C1: tuple = tuple(float(v) for v in np.geomspace(0.05, 4.0, 20))
    eps0: tuple = tuple(float(v) for v in np.geomspace(1e-4, EPS0_MAX, 13))


@dataclass(frozen=True, eq=False)
class SearchResult:
    kit: BarrierKit
    certificate: Beta1Certificate
    battery: Battery
    verdicts: list
    gaps: list
    cells_tried: int


def search_constants(s, A: float, mu: float, bump: BumpProfile = BumpProfile(),
                     battery: Optional[Battery] = None, grid: SearchGrid = SearchGrid(),
                     require_gap: bool = True, q: Optional[QuadratureScheme] = None) -> SearchResult:
    """Grid search for the admissible kit with the largest ``theta``.

    A cell ``(c0, C1, eps0)`` is admissible when the worst-case ``m`` stays
    below 1/2, ``eps0 <= theta/2`` (so the barrier at ``t = 0`` still sits
    below ``1 - theta``), every battery member meets the hypotheses under
    ``eps0``, each member passes the point estimate and, with
    ``require_gap``, stays below the barrier.  Ties in ``theta`` go to the
    larger ``eps0``.
    """
    s = as_order(s).s
    if not 0 < mu <= CYLINDER_MEASURE:
        raise ValueError("mu out of range")
    q = calibrated(s) if q is None or not q.calibrated else q
    probe = BarrierKit(s, A, mu, 1.0, 1.0, 1.0, bump=bump)
    cert = find_beta1(probe, s, q)
    if battery is None:
        battery = build_battery(BatteryConfig.for_kit(s, A))
    hyps = [check_hypotheses(tr, BarrierKit(s, A, mu, 1.0, 1.0, EPS0_MAX, bump=bump))
            for tr in battery.members]
    res_max = max(h.residual_max for h in hyps)
    tops = [max_on_unit_cylinder(tr.field) for tr in battery.members]

    cells = sorted(itertools.product(grid.c0, grid.C1),
                   key=lambda c: -c[0] * math.exp(-2 * c[1]))
    tried = 0
    for c0, C1 in cells:
        theta = c0 * math.exp(-2 * C1) * mu / 2
        if theta < THETA_FLOOR:
            break
        if c0 * UNIT_BALL * (1 - math.exp(-2 * C1)) / C1 > 0.5:
            continue
        if max(tops) > 1 - theta:
            continue
        # the measured residual itself is a candidate, so grid spacing cannot exclude a kit
        for eps0 in sorted({*grid.eps0, res_max}, reverse=True):
            tried += 1
            if eps0 > theta / 2 or eps0 < res_max:
                continue
            kit = BarrierKit(s, A, mu, c0, C1, eps0, beta1=cert.level, bump=bump,
                             battery_hash=battery.digest)
            verdicts = [verify_point_estimate(tr, kit) for tr in battery.members]
            if not all(v.hypotheses_ok and v.passed for v in verdicts):
                continue
            gaps = [_gap(tr.field, kit, h) for tr, h in zip(battery.members, hyps)]
            if require_gap and min(g.gap for g in gaps) < 0:
                continue
            return SearchResult(kit, cert, battery, verdicts, gaps, tried)
    worst = int(np.argmax(tops))
    raise SearchExhausted(
        f"no admissible kit above theta floor {THETA_FLOOR}; residual max {res_max:.3g}, "
        f"worst member seed {battery.seeds[worst]} with max u {tops[worst]:.4g}"
    )


def write_eta_csv(path, kit: BarrierKit, times=SCAN_TIMES, n: int = 401) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "eta"])
        for t in times:
            x = np.linspace(-(2 - kit.A * t), 2 - kit.A * t, n)
            for xi, e in zip(x, eta(x, t, kit)):
                w.writerow([t, repr(float(xi)), repr(float(e))])


def write_m_csv(path, m: MFunction) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "m"])
        for t, v in zip(m.times, m.values):
            w.writerow([repr(float(t)), repr(float(v))])
