"""Domain types, the periodic grid, parabolic scaling and oscillation primitives.

Everything here is a pure function of immutable inputs.  The whole space is
approximated by a periodic torus ``[-L/2, L/2)``; the grid is centred so that
``x = 0`` is always a sample.
"""
from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize

DEFAULT_PERIOD = 16 * math.pi


class CylinderOutOfRange(ValueError):
    """A cylinder is not covered by the sampled region of a field."""


class DomainExceeded(ValueError):
    """Rescaled samples map outside the domain of the source field."""


class Regime(enum.Enum):
    SUPERCRITICAL = "supercritical"
    CRITICAL = "critical"
    SUBCRITICAL = "subcritical"


@dataclass(frozen=True)
class FractionalOrder:
    s: float

    def __post_init__(self):
        s = float(self.s)
        if not 0.0 < s < 1.0:
            raise ValueError(f"fractional order must lie in (0, 1), got {s}")
        object.__setattr__(self, "s", s)

    @property
    def regime(self) -> Regime:
        if self.s < 0.5:
            return Regime.SUPERCRITICAL
        if self.s == 0.5:
            return Regime.CRITICAL
        return Regime.SUBCRITICAL

    def __float__(self):
        return self.s


def as_order(s) -> FractionalOrder:
    return s if isinstance(s, FractionalOrder) else FractionalOrder(s)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L/2, L/2)`` with a power-of-two size."""

    period: float
    n_points: int

    def __post_init__(self):
        n = int(self.n_points)
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two, got {self.n_points}")
        if not self.period > 0:
            raise ValueError("period must be positive")
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "period", float(self.period))

    @property
    def h(self) -> float:
        return self.period / self.n_points

    @property
    def x(self) -> np.ndarray:
        return -0.5 * self.period + self.h * np.arange(self.n_points)

    @property
    def xi(self) -> np.ndarray:
        """Angular wavenumbers matching ``numpy.fft.rfft`` ordering."""
        return 2 * np.pi * np.fft.rfftfreq(self.n_points, self.h)

    @property
    def half_width(self) -> float:
        return 0.5 * self.period

    def index_of(self, x0: float) -> int:
        return int(round((x0 + 0.5 * self.period) / self.h)) % self.n_points


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Field:
    """Space-time samples ``values[i, j] = u(x_j, times[i])``."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape != (times.size, self.grid.n_points):
            raise ValueError(
                f"values shape {values.shape} does not match "
                f"({times.size}, {self.grid.n_points})"
            )
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "times", _readonly(times))
        object.__setattr__(self, "values", _readonly(values))

    @classmethod
    def from_function(cls, grid: Grid, times, func) -> "Field":
        times = np.atleast_1d(np.asarray(times, dtype=float))
        x = grid.x
        return cls(grid, times, np.array([np.broadcast_to(func(x, t), x.shape) for t in times]))

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def row_at(self, t: float) -> np.ndarray:
        """Linear interpolation in time."""
        return interp_rows(self.times, self.values, np.array([t]))[0]


def interp_rows(times: np.ndarray, values: np.ndarray, t_new: np.ndarray) -> np.ndarray:
    """Linear-in-time interpolation of whole rows (exact at stored levels)."""
    t_new = np.asarray(t_new, dtype=float)
    if times.size == 1:
        if np.any(np.abs(t_new - times[0]) > 1e-12 * max(1.0, abs(times[0]))):
            raise DomainExceeded("single time level cannot be interpolated")
        return np.repeat(values, t_new.size, axis=0)
    tol = 1e-12 * max(1.0, np.max(np.abs(times)))
    if np.any(t_new < times[0] - tol) or np.any(t_new > times[-1] + tol):
        raise DomainExceeded("requested times outside the sampled time range")
    t_new = np.clip(t_new, times[0], times[-1])
    hi = np.clip(np.searchsorted(times, t_new, side="left"), 1, times.size - 1)
    lo = hi - 1
    w = (t_new - times[lo]) / (times[hi] - times[lo])
    exact_lo = np.isclose(t_new, times[lo], rtol=0, atol=tol)
    exact_hi = np.isclose(t_new, times[hi], rtol=0, atol=tol)
    w = np.where(exact_lo, 0.0, np.where(exact_hi, 1.0, w))
    return (1 - w)[:, None] * values[lo] + w[:, None] * values[hi]


def periodic_spline(grid: Grid, rows: np.ndarray) -> CubicSpline:
    """Periodic cubic spline through each row (axis 1 is space)."""
    rows = np.atleast_2d(rows)
    xe = np.append(grid.x, grid.half_width)
    ye = np.concatenate([rows, rows[:, :1]], axis=1)
    return CubicSpline(xe, ye, axis=1, bc_type="periodic")


def wrap(grid: Grid, x) -> np.ndarray:
    L = grid.period
    return (np.asarray(x, dtype=float) + 0.5 * L) % L - 0.5 * L


@dataclass(frozen=True)
class DriftSpec:
    """A drift ``b(x, t)`` plus its measured norms.

    ``rule`` is any callable ``rule(x, t) -> array``; use the builders in
    :mod:`fracdrift.drifts` for the stock classes.
    """

    rule: Callable
    sup_norm: float
    holder_seminorm: Optional[float] = None
    holder_exponent: Optional[float] = None
    divergence_free: bool = False
    kind: str = "custom"
    autonomous: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.sup_norm >= 0:
            raise ValueError("sup_norm must be nonnegative")
        if self.holder_seminorm is not None and not self.holder_seminorm >= 0:
            raise ValueError("holder_seminorm must be nonnegative")

    def __call__(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.rule(x, t), dtype=float), x.shape)

    def sample(self, grid: Grid, t: float = 0.0) -> np.ndarray:
        return np.array(self(grid.x, t))

    def rescaled(self, lam: float, s) -> "DriftSpec":
        """Drift of the rescaled equation, ``lam**(2s-1) b(lam x, lam**(2s) t)``."""
        s = as_order(s).s
        k = lam ** (2 * s - 1)
        semi = None
        if self.holder_seminorm is not None and self.holder_exponent is not None:
            semi = k * lam**self.holder_exponent * self.holder_seminorm
        return DriftSpec(_Scaled(self.rule, lam, lam ** (2 * s), k), k * self.sup_norm,
                         holder_seminorm=semi, holder_exponent=self.holder_exponent,
                         divergence_free=self.divergence_free, kind=self.kind,
                         autonomous=self.autonomous, meta=dict(self.meta, rescaled_by=lam))

    def supports_order(self, s) -> bool:
        """Whether this drift meets the hypothesis class required for ``s``."""
        s = as_order(s).s
        if s >= 0.5:
            return True
        return (
            self.holder_seminorm is not None
            and self.holder_exponent is not None
            and self.holder_exponent >= 1 - 2 * s - 1e-12
        )


@dataclass(frozen=True)
class Forcing:
    """Right-hand side ``f(x, t)`` with a recorded sup norm."""

    rule: Optional[Callable] = None
    sup_norm: float = 0.0

    @classmethod
    def zero(cls) -> "Forcing":
        return cls(None, 0.0)

    @classmethod
    def constant(cls, value: float) -> "Forcing":
        return cls(_Constant(float(value)), abs(float(value)))

    @property
    def is_zero(self) -> bool:
        return self.rule is None

    def rescaled(self, lam: float, s, alpha: float) -> "Forcing":
        """Forcing of the rescaled equation, ``lam**(2s-alpha) f(lam x, lam**(2s) t)``."""
        if self.rule is None:
            return self
        s = as_order(s).s
        k = lam ** (2 * s - alpha)
        return Forcing(_Scaled(self.rule, lam, lam ** (2 * s), k), k * self.sup_norm)

    def __call__(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.rule is None:
            return np.zeros_like(x)
        return np.broadcast_to(np.asarray(self.rule(x, t), dtype=float), x.shape)


@dataclass(frozen=True)
class _Scaled:
    rule: Callable
    x_scale: float
    t_scale: float
    factor: float

    def __call__(self, x, t=0.0):
        return self.factor * np.asarray(self.rule(self.x_scale * np.asarray(x), self.t_scale * t))


@dataclass(frozen=True)
class _Constant:
    value: float

    def __call__(self, x, t=0.0):
        return np.full(np.shape(x), self.value)


def measure_sup_norm(rule: Callable, x: np.ndarray, times: Sequence[float] = (0.0,)) -> float:
    return float(max(np.max(np.abs(rule(x, t))) for t in times))


def holder_seminorm(func: Callable, exponent: float, period: float, n_base: int = 2048,
                    n_lag: int = 160, polish: int = 8) -> float:
    """Measured ``sup |g(x+d) - g(x)| / d**exponent`` of a periodic 1-D function.

    Lags are restricted to ``(0, period/2]``, which suffices by periodicity.  A
    coarse grid search is followed by local polishing of the best candidates.
    """
    x = -0.5 * period + period * np.arange(n_base) / n_base
    lags = np.unique(np.concatenate([
        np.geomspace(period * 1e-7, 0.5 * period, n_lag),
        np.linspace(0.5 * period / n_lag, 0.5 * period, n_lag),
    ]))
    g0 = func(x)
    ratios = np.empty((lags.size, x.size))
    for i, d in enumerate(lags):
        ratios[i] = np.abs(func(x + d) - g0) / d**exponent
    flat = np.argsort(ratios, axis=None)[::-1][:polish]
    best = float(ratios.max())

    def neg(p):
        xb, logd = p
        d = min(math.exp(logd), 0.5 * period)
        return -abs(float(func(np.array([xb + d]))[0] - func(np.array([xb]))[0])) / d**exponent

    for idx in flat:
        i, j = np.unravel_index(idx, ratios.shape)
        res = minimize(neg, x0=[x[j], math.log(lags[i])], method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        best = max(best, -float(res.fun))
    return best


@dataclass(frozen=True)
class Cylinder:
    """Parabolic cylinder ``B_r(x0) x [t0 - r**(2s), t0]``."""

    center: tuple
    r: float
    s: FractionalOrder

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("cylinder radius must be positive")
        object.__setattr__(self, "s", as_order(self.s))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def depth(self) -> float:
        return self.r ** (2 * self.s.s)

    @property
    def x_extent(self) -> tuple:
        x0 = self.center[0]
        return (x0 - self.r, x0 + self.r)

    @property
    def t_extent(self) -> tuple:
        t0 = self.center[1]
        return (t0 - self.depth, t0)

    def scaled(self, lam: float) -> "Cylinder":
        return Cylinder(self.center, lam * self.r, self.s)


@dataclass(frozen=True)
class ScalingParams:
    lam: float
    alpha: float
    s: FractionalOrder

    def __post_init__(self):
        object.__setattr__(self, "s", as_order(self.s))
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0 < self.alpha <= 2 * self.s.s + 1e-15:
            raise ValueError(f"alpha must lie in (0, 2s], got {self.alpha}")


def cylinder_mask(u: Field, Q: Cylinder):
    """Boolean masks (time, space) of the samples inside ``Q``."""
    x0, t0 = Q.center
    g = u.grid
    tol_x = 1e-9 * g.h
    lo, hi = Q.x_extent
    if lo < g.x[0] - tol_x or hi > g.x[-1] + tol_x:
        raise CylinderOutOfRange(
            f"cylinder spatial extent [{lo:.6g}, {hi:.6g}] exceeds grid [{g.x[0]:.6g}, {g.x[-1]:.6g}]"
        )
    tlo, thi = Q.t_extent
    span = max(1.0, float(np.max(np.abs(u.times))))
    tol_t = 1e-9 * span
    if tlo < u.times[0] - tol_t or thi > u.times[-1] + tol_t:
        raise CylinderOutOfRange(
            f"cylinder time extent [{tlo:.6g}, {thi:.6g}] exceeds sampled "
            f"[{u.times[0]:.6g}, {u.times[-1]:.6g}]"
        )
    xm = np.abs(u.x - x0) <= Q.r + tol_x
    tm = (u.times >= tlo - tol_t) & (u.times <= thi + tol_t)
    if not xm.any() or not tm.any():
        raise CylinderOutOfRange("cylinder contains no samples")
    return tm, xm


def sample_counts(u: Field, Q: Cylinder) -> tuple:
    tm, xm = cylinder_mask(u, Q)
    return int(tm.sum()), int(xm.sum())


def oscillation(u: Field, Q: Cylinder) -> float:
    """``max - min`` of the samples of ``u`` inside ``Q``."""
    tm, xm = cylinder_mask(u, Q)
    block = u.values[np.ix_(tm, xm)]
    return float(block.max() - block.min())


def aligned_rescale_target(u: Field, lam: float, s) -> tuple:
    """Output grid and times for which :func:`rescale` needs no interpolation."""
    s = as_order(s).s
    grid = Grid(u.grid.period / lam, u.grid.n_points)
    return grid, u.times / lam ** (2 * s)


def rescale(u: Field, p: ScalingParams, grid: Optional[Grid] = None,
            times: Optional[np.ndarray] = None) -> Field:
    """``lam**(-alpha) * u(lam * x, lam**(2s) * t)`` on the requested samples.

    Interpolation is periodic cubic in space and linear in time; on aligned
    targets (see :func:`aligned_rescale_target`) both are exact.
    """
    grid = u.grid if grid is None else grid
    times = u.times if times is None else np.asarray(times, dtype=float)
    lam, s = p.lam, p.s.s
    src_t = lam ** (2 * s) * times
    xs = lam * grid.x
    g = u.grid
    tol = 1e-9 * g.h
    if xs.min() < -g.half_width - tol or xs.max() > g.half_width + tol:
        raise DomainExceeded("rescaled spatial samples fall outside the source domain")
    rows = interp_rows(u.times, u.values, src_t)
    idx = (xs + g.half_width) / g.h
    aligned = np.allclose(idx, np.round(idx), rtol=0, atol=1e-9)
    if aligned:
        out = rows[:, np.round(idx).astype(int) % g.n_points]
    else:
        out = periodic_spline(g, rows)(xs)
    return Field(grid, times, lam ** (-p.alpha) * out)


def effective_radius(s, sup_norm_b: float, rtol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Radius ``R`` of the diminish-of-oscillation rescaling.

    ``2 + |b|`` when ``s >= 1/2``; otherwise the fixed point of
    ``R -> R**(1-2s) |b| + 2`` on ``[2, inf)``.
    """
    s = as_order(s).s
    if sup_norm_b < 0:
        raise ValueError("sup norm must be nonnegative")
    if s >= 0.5:
        return 2.0 + sup_norm_b
    gamma = 1 - 2 * s
    R = 2.0
    for _ in range(max_iter):
        R_new = R**gamma * sup_norm_b + 2.0
        if abs(R_new - R) <= rtol * R_new:
            return R_new
        R = R_new
    # slow contraction (tiny s, large |b|): the map is concave, bracket the root
    hi = R
    while hi**gamma * sup_norm_b + 2.0 > hi:
        hi *= 2
    return brentq(lambda q: q**gamma * sup_norm_b + 2.0 - q, 2.0, hi, xtol=0, rtol=4e-16)


# --- serialization ----------------------------------------------------------

_MAGIC = b"FDFIELD1"
_HEADER = struct.Struct("<dqqd")


def write_field(path, u: Field, s: float = float("nan")) -> None:
    """Binary container: magic, header ``(period, n_points, n_times, s)``,
    the time stamps, then row-major float64 values (all little endian)."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(u.grid.period, u.grid.n_points, u.times.size, float(s)))
        fh.write(np.ascontiguousarray(u.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def read_field(path) -> tuple:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not a field container")
    period, n, nt, s = _HEADER.unpack_from(data, 8)
    off = 8 + _HEADER.size
    times = np.frombuffer(data, dtype="<f8", count=nt, offset=off)
    off += 8 * nt
    values = np.frombuffer(data, dtype="<f8", count=nt * n, offset=off).reshape(nt, n)
    return Field(Grid(period, n), times.copy(), values.copy()), s


def write_field_csv(path, u: Field) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u"])
        x = u.x
        for t, row in zip(u.times, u.values):
            for xv, uv in zip(x, row):
                w.writerow([repr(float(t)), repr(float(xv)), repr(float(uv))])
