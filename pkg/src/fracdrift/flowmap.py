"""Flow of the drift and the moving-frame change of variables used when s < 1/2.

A path ``A`` with ``A' = b(A, t)`` and ``A(t_anchor) = x0`` is integrated by
Euler steps outward from the anchor.  Shifting a field by ``A(t)`` gives a
frame in which the drift vanishes at the origin.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DomainExceeded, DriftSpec, Field, Grid, periodic_spline


class EnvelopeViolated(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FlowPath:
    """Euler path. ``times`` are analysis times; physical time is ``times + time_offset``."""

    times: np.ndarray
    positions: np.ndarray
    local_residual: np.ndarray
    tolerance: float = math.inf
    time_offset: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        a = np.asarray(self.positions, dtype=float)
        if t.ndim != 1 or t.shape != a.shape or t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("path needs >= 2 strictly increasing times and matching positions")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite path positions")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", a)
        object.__setattr__(self, "local_residual", np.asarray(self.local_residual, dtype=float))

    @property
    def residual_norm(self) -> float:
        return float(self.local_residual.max(initial=0.0))

    @property
    def within_tolerance(self) -> bool:
        return self.residual_norm <= self.tolerance

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        tol = 1e-9 * max(1.0, float(np.abs(self.times).max()))
        if np.any(t < self.times[0] - tol) or np.any(t > self.times[-1] + tol):
            raise DomainExceeded("requested time outside the flow path")
        return np.interp(t, self.times, self.positions)

    def negated(self) -> "FlowPath":
        return FlowPath(self.times, -self.positions, self.local_residual, self.tolerance,
                        self.time_offset)

    def write_csv(self, path) -> None:
        # one residual per step; the first row has none
        res = np.concatenate([[np.nan], self.local_residual])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "A", "residual"])
            for t, a, r in zip(self.times, self.positions, res):
                w.writerow([repr(float(t)), repr(float(a)), "" if np.isnan(r) else repr(float(r))])


def _midpoint_residual(b: DriftSpec, t, a, offset):
    slope = np.diff(a) / np.diff(t)
    tm = 0.5 * (t[1:] + t[:-1])
    am = 0.5 * (a[1:] + a[:-1])
    vals = np.array([b(np.array([x]), tt + offset)[0] for x, tt in zip(am, tm)])
    return np.abs(slope - vals)


def integrate_flow(b: DriftSpec, t_span, dt: float, x0: float = 0.0, t_anchor: float = 0.0,
                   tolerance: float = math.inf) -> FlowPath:
    """Euler path through ``(x0, t_anchor)``, forward and backward over ``t_span``.

    The recorded residual per step is ``|slope - b(midpoint)|``; it is only
    informative, since any small-residual path is acceptable.
    """
    t0, t1 = map(float, t_span)
    if not (t0 <= t_anchor <= t1) or not t1 > t0:
        raise ValueError("t_anchor must lie in the increasing interval t_span")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n_fwd = int(math.ceil((t1 - t_anchor) / dt - 1e-9))
    n_bwd = int(math.ceil((t_anchor - t0) / dt - 1e-9))
    fwd_t = np.minimum(t_anchor + dt * np.arange(n_fwd + 1), t1)
    bwd_t = np.maximum(t_anchor - dt * np.arange(n_bwd + 1), t0)
    fwd = np.empty(n_fwd + 1)
    bwd = np.empty(n_bwd + 1)
    fwd[0] = bwd[0] = x0
    for k in range(n_fwd):
        fwd[k + 1] = fwd[k] + (fwd_t[k + 1] - fwd_t[k]) * b(np.array([fwd[k]]), fwd_t[k])[0]
    for k in range(n_bwd):
        bwd[k + 1] = bwd[k] - (bwd_t[k] - bwd_t[k + 1]) * b(np.array([bwd[k]]), bwd_t[k])[0]
    times = np.concatenate([bwd_t[::-1], fwd_t[1:]])
    pos = np.concatenate([bwd[::-1], fwd[1:]])
    if not np.all(np.isfinite(pos)):
        raise ValueError("non-finite drift samples along the path")
    return FlowPath(times, pos, _midpoint_residual(b, times, pos, 0.0), tolerance)


def reanchor(path: FlowPath, t_star: float) -> FlowPath:
    """The same curve with analysis time measured from ``t_star``."""
    tp = path.times
    return FlowPath(tp - t_star, path.positions, path.local_residual, path.tolerance,
                    path.time_offset + t_star)


def gauge_transform(u: Field, path: FlowPath) -> Field:
    """``u(x + A(t), t)`` by periodic cubic interpolation (``path.negated()`` inverts it)."""
    shifts = path.at(u.times)
    g = u.grid
    out = np.empty_like(u.values)
    for i, a in enumerate(shifts):
        xs = (g.x + a + g.half_width) % g.period - g.half_width
        out[i] = periodic_spline(g, u.values[i])(xs)[0]
    return Field(g, u.times, out)


def fourier_shift_eval(grid: Grid, row: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Trigonometric interpolant of one row evaluated at arbitrary points."""
    coef = np.fft.rfft(row) / grid.n_points
    k = grid.xi
    w = np.full(k.size, 2.0)
    w[0] = 1.0
    if grid.n_points % 2 == 0:
        w[-1] = 1.0
    phase = np.exp(1j * np.outer(xs + grid.half_width, k))
    return (phase * (w * coef)).real.sum(axis=1)


def tube_oscillation(u: Field, path: FlowPath, r: float, t_range) -> float:
    """Oscillation of ``u`` over ``{|x - A(t)| <= r, t in t_range}``.

    Evaluates the trigonometric interpolant directly, so it is an
    independent check on ``oscillation(gauge_transform(u, path), ...)``.
    """
    t_lo, t_hi = t_range
    tol = 1e-9 * max(1.0, float(np.abs(u.times).max()))
    sel = (u.times >= t_lo - tol) & (u.times <= t_hi + tol)
    if not sel.any():
        raise DomainExceeded("no stored time levels inside the tube")
    g = u.grid
    offsets = g.x[np.abs(g.x) <= r + 1e-9 * g.h]
    lo, hi = math.inf, -math.inf
    for t, row in zip(u.times[sel], u.values[sel]):
        vals = fourier_shift_eval(g, row, offsets + path.at(t))
        lo, hi = min(lo, vals.min()), max(hi, vals.max())
    return float(hi - lo)


@dataclass(frozen=True)
class GaugedRule:
    drift: DriftSpec
    path: FlowPath

    def __call__(self, x, t=0.0):
        a = float(self.path.at(t))
        tp = t + self.path.time_offset
        return self.drift(np.asarray(x) + a, tp) - self.drift(np.array([a]), tp)[0]


def envelope_constant(b: DriftSpec, path: FlowPath, exponent: float, radius: float,
                      n_x: int = 4000, n_t: int = 64, times=None) -> float:
    """Dense-grid ``sup |b~(x,t)| / |x|^exponent`` over ``0 < |x| <= radius``."""
    rule = GaugedRule(b, path)
    mag = np.unique(np.concatenate([np.geomspace(1e-7 * radius, radius, n_x),
                                    np.linspace(radius / n_x, radius, n_x)]))
    xs = np.concatenate([-mag[::-1], mag])
    if times is None:
        idx = np.unique(np.linspace(0, path.times.size - 1, min(n_t, path.times.size)).astype(int))
        times = path.times[idx]
    best = 0.0
    for t in times:
        best = max(best, float(np.max(np.abs(rule(xs, t)) / np.abs(xs) ** exponent)))
    return best


def gauged_drift(b: DriftSpec, path: FlowPath, grid: Grid, tolerance: float = 1e-6,
                 radius: Optional[float] = None) -> DriftSpec:
    """Drift seen in the moving frame, ``b(x + A, t) - b(A, t)``.

    The envelope constant is measured on a dense grid and must not exceed
    the declared Hoelder seminorm by more than ``tolerance``.
    """
    if b.holder_seminorm is None or b.holder_exponent is None:
        raise ValueError("gauged drift needs a declared Hoelder seminorm and exponent")
    if b.holder_exponent >= 1:
        raise ValueError("the moving frame is only used for s < 1/2 (exponent < 1)")
    radius = grid.half_width if radius is None else radius
    C = envelope_constant(b, path, b.holder_exponent, radius)
    if C > b.holder_seminorm + tolerance:
        raise EnvelopeViolated(
            f"measured envelope {C:.8g} exceeds declared seminorm {b.holder_seminorm:.8g}"
        )
    rule = GaugedRule(b, path)
    ts = path.times[np.unique(np.linspace(0, path.times.size - 1, 32).astype(int))]
    sup = max(float(np.max(np.abs(rule(grid.x, t)))) for t in ts)
    return DriftSpec(rule, sup, holder_seminorm=b.holder_seminorm, holder_exponent=b.holder_exponent,
                     kind="gauged", autonomous=False, meta={"envelope": C, "source": b.kind})
