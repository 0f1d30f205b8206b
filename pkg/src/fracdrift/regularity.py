"""Oscillation decay across nested cylinders and Hoelder-type estimates.

The iteration rescales the (optionally moving-frame) field by powers of
``r = 1/(2R)`` and checks at each level that the oscillation drops by the
factor ``1 - theta`` of the point-estimate kit.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .barrier import BarrierKit
from .core import (
    Cylinder, DriftSpec, Field, Forcing, ScalingParams, aligned_rescale_target, as_order,
    effective_radius, oscillation, rescale, sample_counts,
)
from .flowmap import FlowPath, GaugedRule, gauge_transform, gauged_drift

MIN_SPATIAL_SAMPLES = 8
MIN_TIME_LEVELS = 4


class UnderResolved(ValueError):
    pass


# --- normalization -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Normalized:
    field: Field
    scale: float
    forcing_sup: float
    degenerate: bool


def _forcing_sup(f) -> float:
    if f is None:
        return 0.0
    if isinstance(f, Field):
        return f.sup_norm()
    return float(f.sup_norm)


def normalize(u: Field, f, eps0: float) -> Normalized:
    """Divide by ``2 |u| + |f| / eps0``: oscillation at most 1, forcing at most ``eps0``."""
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    fs = _forcing_sup(f)
    den = 2 * u.sup_norm() + fs / eps0
    if den == 0:
        return Normalized(u, 1.0, 0.0, True)
    return Normalized(Field(u.grid, u.times, u.values / den), 1.0 / den, fs / den, False)


# --- decay sequences ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DecaySequence:
    r: float
    oscillations: np.ndarray
    anchor: tuple = (0.0, 0.0)
    s: float = 0.5

    def __post_init__(self):
        osc = np.asarray(self.oscillations, dtype=float)
        if not 0 < self.r < 1:
            raise ValueError("r must lie in (0, 1)")
        if osc.ndim != 1 or osc.size < 4:
            raise ValueError("a decay sequence needs K >= 3 (at least 4 entries)")
        if np.any(osc < 0) or not np.all(np.isfinite(osc)):
            raise ValueError("oscillations must be finite and nonnegative")
        object.__setattr__(self, "oscillations", osc)

    @property
    def K(self) -> int:
        return self.oscillations.size - 1

    def to_json(self) -> dict:
        return {"r": self.r, "oscillations": self.oscillations.tolist(),
                "anchor": list(self.anchor), "s": self.s}


def _check_resolution(u: Field, Q: Cylinder, k: int):
    nt, nx = sample_counts(u, Q)
    if nx < MIN_SPATIAL_SAMPLES or nt < MIN_TIME_LEVELS:
        raise UnderResolved(
            f"level {k} (radius {Q.r:.3g}) has {nx} spatial samples and {nt} time levels; "
            f"need {MIN_SPATIAL_SAMPLES} and {MIN_TIME_LEVELS}"
        )


def decay_sequence(u: Field, anchor, r: float, K: int, s) -> DecaySequence:
    """Oscillations over ``Q_{r^k}`` at ``anchor`` for ``k = 0..K``."""
    s = as_order(s)
    osc = []
    for k in range(K + 1):
        Q = Cylinder(tuple(anchor), r**k, s)
        _check_resolution(u, Q, k)
        osc.append(oscillation(u, Q))
    return DecaySequence(r, np.array(osc), tuple(anchor), s.s)


@dataclass(frozen=True)
class AlphaFit:
    alpha_hat: float
    C_hat: float
    raw_slope: float
    clamped: bool
    exact: bool
    envelope_C: float

    def to_json(self) -> dict:
        return asdict(self)


def fit_alpha(seq: DecaySequence, s) -> AlphaFit:
    """Least-squares slope of ``log osc_k`` against ``k log r``, capped at ``2s``.

    ``C_hat`` is the exponential of the intercept; ``envelope_C`` is the
    smallest constant with ``osc_k <= C r^(alpha_hat k)`` for every level.
    A nonpositive slope is reported as is (no lower clamp) so callers see it.
    """
    s = as_order(s).s
    osc = seq.oscillations
    if np.all(osc == 0):
        return AlphaFit(2 * s, 0.0, math.inf, False, True, 0.0)
    nz = osc > 0
    if nz.sum() < 3:
        raise ValueError("need at least 3 nonzero oscillations")
    k = np.arange(osc.size)[nz]
    X = k * math.log(seq.r)
    y = np.log(osc[nz])
    slope, intercept = np.polyfit(X, y, 1)
    alpha = min(float(slope), 2 * s)
    # slopes that reach 2s only by rounding are not reported as clamped
    clamped = slope > 2 * s * (1 + 1e-9)
    env = float(np.max(osc * seq.r ** (-alpha * np.arange(osc.size))))
    return AlphaFit(alpha, float(math.exp(intercept)), float(slope), bool(clamped), False, env)


# --- diminish of oscillation -------------------------------------------------------------

@dataclass(frozen=True)
class DiminishVerdict:
    r: float
    R: float
    drift_bound: float
    rescaled_drift_bound: float
    osc_Q1: float
    osc_Qr: float
    theta: float
    forcing_sup: float
    tail_ok: bool
    tail_witness_M: Optional[float]
    M_cap: float
    hypotheses_ok: bool
    passed: bool

    def to_json(self) -> dict:
        return asdict(self)


def _window_osc(u: Field, anchor, M: float) -> float:
    x0, t0 = anchor
    tm = (u.times >= t0 - 1 - 1e-9) & (u.times <= t0 + 1e-9)
    xm = np.abs(u.x - x0) <= M + 1e-9 * u.grid.h
    block = u.values[np.ix_(tm, xm)]
    return float(block.max() - block.min())


def check_diminish(u: Field, b: Optional[DriftSpec], f, s, kit: BarrierKit, alpha: float,
                   anchor=(0.0, 0.0), drift_bound: Optional[float] = None,
                   r: Optional[float] = None, n_M: int = 24) -> DiminishVerdict:
    """Test ``osc_{Q_r} u <= 1 - theta`` and record the three hypotheses.

    ``drift_bound`` overrides ``|b|`` (used for rescaled levels).  The growth
    hypothesis ``osc_{B_M x [-1,0]} <= (M/r)^alpha`` is checked for ``1 < M``
    up to the largest radius the grid holds around the anchor.
    """
    s = as_order(s)
    A = float(b.sup_norm if drift_bound is None else drift_bound)
    R = effective_radius(s, A)
    r = 1.0 / (2 * R) if r is None else r
    x0, t0 = anchor
    osc1 = oscillation(u, Cylinder((x0, t0), 1.0, s))
    oscr = oscillation(u, Cylinder((x0, t0), r, s))
    cap = u.grid.half_width - abs(x0) - u.grid.h
    witness = None
    for M in np.geomspace(1.0, max(cap, 1.0), n_M)[1:]:
        if _window_osc(u, anchor, M) > (M / r) ** alpha * (1 + 1e-12):
            witness = float(M)
            break
    fs = _forcing_sup(f)
    hyp = osc1 <= 1 + 1e-12 and witness is None and fs <= kit.eps0 * (1 + 1e-12)
    return DiminishVerdict(
        r=r, R=R, drift_bound=A,
        rescaled_drift_bound=(2 * R) ** (1 - 2 * s.s) * A,
        osc_Q1=osc1, osc_Qr=oscr, theta=kit.theta, forcing_sup=fs,
        tail_ok=witness is None, tail_witness_M=witness, M_cap=cap,
        hypotheses_ok=bool(hyp), passed=oscr <= 1 - kit.theta,
    )


# --- the iteration -------------------------------------------------------------------

def induction_exponent(kit: BarrierKit, r: float, s) -> float:
    """``alpha`` with ``r^alpha = 1 - theta``, capped at ``2s``."""
    s = as_order(s).s
    return min(math.log(1 - kit.theta) / math.log(r), 2 * s)


def gauged_level_bound(b: DriftSpec, path: FlowPath, s: float, r: float, k: int,
                       n_x: int = 1500, n_t: int = 33) -> float:
    """Bound on ``|x| <= 1`` for the level-``k`` rescaled moving-frame drift.

    The rescaled drift is ``r^(k(2s-1)) b~(r^k x, r^(2sk) t)``.  With the
    envelope ``|b~(y,t)| <= C_k |y|^(1-2s)`` measured on the level's own
    cylinder the powers of ``r`` cancel, leaving ``C_k``.
    """
    rule = GaugedRule(b, path)
    gam = 1 - 2 * s
    rad = r**k
    mag = np.unique(np.concatenate([np.geomspace(1e-6 * rad, rad, n_x),
                                    np.linspace(rad / n_x, rad, n_x)]))
    y = np.concatenate([-mag[::-1], mag])
    t_lo = max(-(rad ** (2 * s)), path.times[0])
    ts = np.linspace(t_lo, min(0.0, path.times[-1]), n_t)
    C_k = max(float(np.max(np.abs(rule(y, t)) / np.abs(y) ** gam)) for t in ts)
    return r ** (k * (2 * s - 1)) * C_k * rad**gam


@dataclass(frozen=True, eq=False)
class IterationResult:
    r: float
    alpha: float
    gauged: bool
    oscillations: np.ndarray
    drift_bounds: np.ndarray
    verdicts: list
    resolved_levels: int
    stopped_reason: str
    envelope: Optional[float] = None

    @property
    def sequence(self) -> DecaySequence:
        return DecaySequence(self.r, self.oscillations[: self.resolved_levels])

    def fit(self, s) -> AlphaFit:
        return fit_alpha(self.sequence, s)

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def to_json(self, s=None) -> dict:
        out = {"r": self.r, "alpha": self.alpha, "gauged": self.gauged,
               "oscillations": self.oscillations.tolist(),
               "drift_bounds": self.drift_bounds.tolist(),
               "resolved_levels": self.resolved_levels, "stopped_reason": self.stopped_reason,
               "envelope": self.envelope, "verdicts": [v.to_json() for v in self.verdicts]}
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "r_k", "osc", "bound", "verdict"])
            for k, osc in enumerate(self.oscillations):
                verdict = ""
                if k < len(self.verdicts):
                    verdict = "pass" if self.verdicts[k].passed else "fail"
                w.writerow([k, repr(self.r**k), repr(float(osc)),
                            repr(self.r ** (self.alpha * k)), verdict])


def iterate_oscillation(u: Field, b: DriftSpec, f, s, kit: BarrierKit,
                        flow: Optional[FlowPath] = None, K: int = 5, r: Optional[float] = None,
                        alpha: Optional[float] = None, gauge: bool = True) -> IterationResult:
    """Nested-cylinder iteration at the origin.

    Level ``k`` looks at ``w_k = r^(-alpha k) v(r^k x, r^(2sk) t)`` and applies
    the diminish check to it.  For ``s < 1/2`` with ``gauge`` the field is
    first moved into the frame of ``flow``; the recorded drift bound is then
    the measured gauged drift on the level's cylinder, otherwise it is
    ``r^(k(2s-1)) |b|``.  Levels stop at the first under-resolved cylinder;
    drift bounds are recorded for all ``K + 1`` levels since they come from
    the closed-form drift.
    """
    so = as_order(s)
    s = so.s
    v = u
    gauged = s < 0.5 and gauge
    envelope = None
    if gauged:
        if flow is None:
            raise ValueError("s < 1/2 needs a flow path for the moving frame")
        gd = gauged_drift(b, flow, u.grid)
        envelope = gd.meta["envelope"]
        v = gauge_transform(u, flow)
    if r is None:
        r = 1.0 / (2 * effective_radius(so, b.sup_norm))
    if alpha is None:
        alpha = induction_exponent(kit, r, so)
    if gauged:
        bounds = np.array([gauged_level_bound(b, flow, s, r, k) for k in range(K + 1)])
    else:
        bounds = np.array([r ** (k * (2 * s - 1)) * b.sup_norm for k in range(K + 1)])

    oscs, verdicts = [], []
    reason = "complete"
    for k in range(K + 1):
        lam = r**k
        try:
            _check_resolution(v, Cylinder((0.0, 0.0), lam, so), k)
        except UnderResolved as exc:
            reason = str(exc)
            break
        oscs.append(oscillation(v, Cylinder((0.0, 0.0), lam, so)))
        if k == K:
            break
        try:
            _check_resolution(v, Cylinder((0.0, 0.0), lam * r, so), k + 1)
        except UnderResolved as exc:
            reason = str(exc)
            break
        grid_k, times_k = aligned_rescale_target(v, lam, so)
        w = rescale(v, ScalingParams(lam, alpha, so), grid_k, times_k)
        fk = f.rescaled(lam, so, alpha) if isinstance(f, Forcing) else f
        verdicts.append(check_diminish(w, None, fk, so, kit, alpha, drift_bound=bounds[k], r=r))
    osc = np.array(oscs + [np.nan] * (K + 1 - len(oscs)))
    return IterationResult(r, alpha, gauged, osc, bounds, verdicts, len(oscs), reason, envelope)


# --- the main estimate -------------------------------------------------------------------

@dataclass(frozen=True)
class RegularityReport:
    alpha_hat: float
    C_hat: float
    C_hat_doubled: float
    theorem_pass: bool
    pair_budget: int
    worst_pair: tuple
    worst_ratio: float

    def to_json(self) -> dict:
        return asdict(self)


def _pair_constants(u: Field, alpha: float, s: float, norm: float, pts: np.ndarray, anchor,
                    t_start: float):
    g = u.grid
    x0 = anchor[0]
    x = x0 - 0.5 + pts[:, 0]
    y = x0 - 0.5 + pts[:, 1]
    tau = np.stack([pts[:, 2], pts[:, 3]], axis=1)
    ta, tb = tau.max(1), tau.min(1)
    ix = np.clip(np.round((x + g.half_width) / g.h).astype(int), 0, g.n_points - 1)
    iy = np.clip(np.round((y + g.half_width) / g.h).astype(int), 0, g.n_points - 1)
    times = u.times - t_start
    it = np.clip(np.searchsorted(times, ta), 0, times.size - 1)
    ir = np.clip(np.searchsorted(times, tb), 0, times.size - 1)
    # snap to stored samples so every value is data, not interpolation
    xs, ys, ts, rs = g.x[ix], g.x[iy], times[it], times[ir]
    keep = (rs > 0) & ((xs != ys) | (ts != rs))
    diff = np.abs(u.values[it, ix] - u.values[ir, iy])
    e = alpha / (2 * s)
    den = (np.abs(xs - ys) ** alpha + np.abs(ts - rs) ** e) * norm
    ratio = np.where(keep, diff * np.maximum(ts, 0) ** e / np.where(keep, den, 1.0), 0.0)
    i = int(np.argmax(ratio))
    return float(ratio[i]), (float(xs[i]), float(ts[i] + t_start), float(ys[i]), float(rs[i] + t_start))


def theorem_check(u: Field, alpha_hat: float, s, pair_budget: int = 4096, f_sup: float = 0.0,
                  anchor=(0.0, None), seed: int = 0) -> RegularityReport:
    """Smallest ``C`` that makes the weighted Hoelder bound hold on sampled pairs.

    Points lie in ``B_{1/2}`` around the anchor, times in ``(0, 1]`` after the
    anchor time (the start of the trajectory by default).  Pairs come from a
    scrambled Sobol sequence; the budget is doubled to check stability.
    """
    s = as_order(s).s
    if not 0 < alpha_hat <= 2 * s + 1e-12:
        raise ValueError("alpha_hat must lie in (0, 2s]")
    t_start = u.times[0] if anchor[1] is None else anchor[1]
    if u.times[-1] - t_start < 1 - 1e-9:
        raise ValueError("field must cover one time unit after the anchor")
    norm = u.sup_norm() + f_sup
    if norm == 0:
        return RegularityReport(alpha_hat, 0.0, 0.0, True, pair_budget, (0, 0, 0, 0), 0.0)
    sob = qmc.Sobol(4, scramble=True, seed=seed)
    m = int(math.ceil(math.log2(max(pair_budget, 2))))
    pts = sob.random_base2(m + 1)
    c1, w1 = _pair_constants(u, alpha_hat, s, norm, pts[: 2**m], anchor, t_start)
    c2, w2 = _pair_constants(u, alpha_hat, s, norm, pts, anchor, t_start)
    # c2 >= c1 since the doubled set contains the first; stable means c2 <= c1 / 0.9
    worst = 0.0 if c2 == 0 else (math.inf if c1 == 0 else 0.9 * c2 / c1)
    stable = math.isfinite(c2) and worst <= 1.0
    return RegularityReport(alpha_hat, c1, c2, bool(stable), 2**m, w2, worst)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def sweep_uniformity(fits, alpha_factor: float = 2.0, C_factor: float = 3.0) -> dict:
    """Spread of fitted ``(alpha_hat, C_hat)`` across a viscosity sweep.

    ``None`` entries (no fit) make the sweep non-uniform.
    """
    if any(f is None for f in fits) or not fits:
        return {"alpha_ratio": None, "C_ratio": None, "uniform": False}
    alphas = [f.alpha_hat for f in fits]
    consts = [f.C_hat for f in fits]
    a_ratio = max(alphas) / min(alphas) if min(alphas) > 0 else math.inf
    if max(consts) == 0:
        c_ratio = 1.0
    else:
        c_ratio = max(consts) / min(consts) if min(consts) > 0 else math.inf
    return {"alpha_ratio": a_ratio, "C_ratio": c_ratio,
            "uniform": bool(a_ratio <= alpha_factor and c_ratio <= C_factor)}


def drift_bound_growth(it: IterationResult) -> Optional[float]:
    """Smallest level-to-level factor of the recorded drift bounds (``None`` if any is zero)."""
    db = it.drift_bounds
    if db.size < 2 or np.any(db <= 0):
        return None
    return float(np.min(db[1:] / db[:-1]))
