"""The fractional Laplacian by two backends, extremal operators and residuals.

The spectral backend (multiplier ``|xi|**(2s)`` on the torus) is the reference
definition.  The quadrature backend evaluates the singular integral

    c * int_0^inf (2u(x) - u(x+y) - u(x-y)) / y**(1+2s) dy

pointwise, with a Taylor model below ``rho`` and an exact tail, and its
constant ``c`` is calibrated against the spectral multiplier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import gamma, zeta

from .core import DriftSpec, Field, Forcing, Grid, as_order, periodic_spline


class TailError(ValueError):
    """Missing or non-integrable tail declaration."""


class CalibrationFailed(RuntimeError):
    pass


class InsufficientTimeLevels(ValueError):
    pass


# --- spectral backend -------------------------------------------------------

def _check_samples(u, grid: Grid) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != grid.n_points:
        raise ValueError(f"expected {grid.n_points} samples, got {u.shape[-1]}")
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite input")
    return u


def apply_multiplier(u, grid: Grid, symbol: np.ndarray) -> np.ndarray:
    u = _check_samples(u, grid)
    return np.fft.irfft(symbol * np.fft.rfft(u, axis=-1), grid.n_points, axis=-1)


def frac_lap_spectral(u, s, grid: Grid) -> np.ndarray:
    """``(-Delta)^s u`` through the multiplier ``|xi|**(2s)``.

    ``u`` may be a single slice or a stack of slices (last axis is space).
    Using the real transform keeps the output real by construction.
    """
    s = as_order(s).s
    return apply_multiplier(u, grid, grid.xi ** (2 * s))


def spectral_derivative(u, grid: Grid) -> np.ndarray:
    xi = grid.xi.astype(complex)
    if grid.n_points % 2 == 0:
        xi[-1] = 0.0  # Nyquist mode has no odd real part
    return apply_multiplier(u, grid, 1j * xi)


def spectral_laplacian(u, grid: Grid) -> np.ndarray:
    return apply_multiplier(u, grid, -grid.xi**2)


# --- quadrature backend -----------------------------------------------------

@dataclass(frozen=True)
class Tail:
    """Declared far-field behaviour of a pointwise-evaluable function.

    ``kind`` is ``"compact"`` (zero outside ``|z| >= radius``), ``"periodic"``
    (with the given ``period``) or ``"power"`` (``|u(z)| <= C (1+|z|)**exponent``).
    """

    kind: str
    radius: float = 0.0
    period: float = 0.0
    exponent: float = 0.0

    def __post_init__(self):
        if self.kind not in ("compact", "periodic", "power"):
            raise TailError(f"unknown tail kind {self.kind!r}")
        if self.kind == "periodic" and not self.period > 0:
            raise TailError("periodic tail needs a positive period")

    @classmethod
    def compact(cls, radius: float) -> "Tail":
        return cls("compact", radius=float(radius))

    @classmethod
    def periodic(cls, period: float) -> "Tail":
        return cls("periodic", period=float(period))

    @classmethod
    def power(cls, exponent: float) -> "Tail":
        return cls("power", exponent=float(exponent))


@dataclass(frozen=True)
class QuadratureScheme:
    rho: float = 1e-3
    outer_cutoff: float = 8.0
    c: float = 1.0
    panel_width: float = 0.1
    nodes: int = 16
    calibrated: bool = False

    def __post_init__(self):
        if not 0 < self.rho < self.outer_cutoff:
            raise ValueError("need 0 < rho < outer_cutoff")
        if not self.c > 0:
            raise ValueError("normalization must be positive")


def exact_normalization(s) -> float:
    """Closed-form 1-D constant ``4^s Gamma(1/2+s) / (sqrt(pi) |Gamma(-s)|)``.

    Only used as an independent cross-check of the calibration.
    """
    s = as_order(s).s
    return 4**s * gamma(0.5 + s) / (math.sqrt(math.pi) * abs(gamma(-s)))


def _panels(a: float, b: float, width: float) -> np.ndarray:
    """Breakpoints: geometric from ``a`` up to 1, then uniform of ``width``."""
    pts = [a]
    while pts[-1] * 2 < min(b, 1.0):
        pts.append(pts[-1] * 2)
    start = pts[-1]
    if b > start:
        n = max(1, int(math.ceil((b - start) / width)))
        pts.extend(start + (b - start) * np.arange(1, n + 1) / n)
    return np.asarray(pts)


def _gauss_nodes(breaks: np.ndarray, order: int):
    g, w = np.polynomial.legendre.leggauss(order)
    a, b = breaks[:-1, None], breaks[1:, None]
    y = 0.5 * (b - a) * g[None, :] + 0.5 * (a + b)
    wy = 0.5 * (b - a) * w[None, :]
    return y.ravel(), wy.ravel()


def _periodic_kernel(y: np.ndarray, period: float, s: float) -> np.ndarray:
    """``sum_j |y + jP|^{-1-2s}`` folded onto ``(0, P/2]``."""
    p = 1 + 2 * s
    q = y / period
    return period ** (-p) * (zeta(p, q) + zeta(p, 1 - q))


def _second_derivative(func: Callable, x: np.ndarray, step: float = 1e-2) -> np.ndarray:
    h = step
    return (
        -func(x + 2 * h) + 16 * func(x + h) - 30 * func(x) + 16 * func(x - h) - func(x - 2 * h)
    ) / (12 * h * h)


def _raw_integral(func, x, s, q: QuadratureScheme, tail: Optional[Tail], transform=None, d2=None):
    """``int_0^inf F(delta(y)) / y**(1+2s) dy`` with ``delta = u(x+y)+u(x-y)-2u(x)``.

    ``transform`` is a positively homogeneous map ``F`` (identity when None).
    Returned without the normalization constant.
    """
    if tail is None:
        raise TailError("tail behaviour must be declared")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    F = (lambda d: d) if transform is None else transform
    p = 1 + 2 * s
    u0 = func(x)
    uxx = _second_derivative(func, x) if d2 is None else np.asarray(d2(x), dtype=float)
    rho = q.rho
    # below rho: delta ~ u''(x) y^2
    total = F(uxx) * rho ** (2 - 2 * s) / (2 - 2 * s)

    if tail.kind == "periodic":
        P = tail.period
        T = 0.5 * P
        if rho >= T:
            raise ValueError("rho must be below half the period")
        # regular part of the periodized kernel near 0 is 2 zeta(p) P^-p
        total = total + F(uxx) * 2 * zeta(p) * P ** (-p) * rho**3 / 3
        y, w = _gauss_nodes(_panels(rho, T, q.panel_width), q.nodes)
        kern = w * _periodic_kernel(y, P, s)
    else:
        if tail.kind == "compact":
            T = max(q.outer_cutoff, float(np.max(np.abs(x))) + tail.radius)
        else:
            if tail.exponent >= 2 * s:
                raise TailError(
                    f"growth exponent {tail.exponent} >= 2s = {2 * s}: integral diverges"
                )
            T = q.outer_cutoff
        y, w = _gauss_nodes(_panels(rho, T, q.panel_width), q.nodes)
        kern = w * y ** (-p)

    X = x[:, None]
    delta = func(X + y[None, :]) + func(X - y[None, :]) - 2 * u0[:, None]
    total = total + F(delta) @ kern

    if tail.kind == "compact":
        # u(x +- y) = 0 beyond T
        total = total + F(-2 * u0) * T ** (-2 * s) / (2 * s)
    elif tail.kind == "power":
        # y = T w^{-1/k}, k = 2s - gamma maps [T, inf) onto (0, 1] with a bounded integrand
        k = 2 * s - tail.exponent
        breaks = np.concatenate([[0.0], np.geomspace(1e-8, 1.0, 60)])
        wv, ww = _gauss_nodes(breaks, q.nodes)
        yy = T * wv ** (-1.0 / k)
        jac = ww * T ** (-2 * s) / k * wv ** (2 * s / k - 1)
        dd = func(X + yy[None, :]) + func(X - yy[None, :]) - 2 * u0[:, None]
        total = total + F(dd) @ jac
    return total


def frac_lap_quadrature(func: Callable, x, s, q: QuadratureScheme, tail: Optional[Tail],
                        d2: Optional[Callable] = None):
    """Singular-integral evaluation of ``(-Delta)^s func`` at the point(s) ``x``.

    ``func`` must accept numpy arrays of any shape.  ``tail`` is required:
    compactly supported functions get an exact tail, periodic ones are folded
    with the periodized kernel, power-growth tails are integrated after an
    exponent-dependent change of variables.
    """
    s = as_order(s).s
    out = -q.c * _raw_integral(func, x, s, q, tail, d2=d2)
    return float(out[0]) if np.ndim(x) == 0 else out


def _unit_cos(x):
    return np.cos(x)


def calibrate_normalization(s, q: QuadratureScheme) -> float:
    """Constant ``c`` making the quadrature of ``cos`` at 0 equal to one.

    The quadrature is linear in ``c`` so the solve is direct.
    """
    s = as_order(s).s
    raw = -_raw_integral(_unit_cos, np.array([0.0]), s, replace(q, c=1.0),
                         Tail.periodic(2 * math.pi), d2=lambda z: -np.cos(z))[0]
    if not np.isfinite(raw) or raw <= 0:
        raise CalibrationFailed(f"uncalibrated integral of cos at 0 is {raw}")
    c = 1.0 / raw
    check = c * raw
    if abs(check - 1.0) > 1e-8:
        raise CalibrationFailed(f"calibration residual {abs(check - 1.0):.3e}")
    return c


def calibrated(s, q: Optional[QuadratureScheme] = None) -> QuadratureScheme:
    """Copy of ``q`` carrying its calibrated normalization."""
    q = QuadratureScheme() if q is None else q
    return replace(q, c=calibrate_normalization(s, q), calibrated=True)


# --- extremal operators -------------------------------------------------------

@dataclass(frozen=True)
class ExtremalBounds:
    lam: float
    Lam: float

    def __post_init__(self):
        if not 0 < self.lam <= self.Lam:
            raise ValueError("need 0 < lambda <= Lambda")


def periodic_interpolant(u_slice, grid: Grid) -> Callable:
    spline = periodic_spline(grid, np.asarray(u_slice, dtype=float))
    L = grid.period

    def func(z):
        z = np.asarray(z, dtype=float)
        zw = (z + 0.5 * L) % L - 0.5 * L
        return spline(zw.ravel())[0].reshape(z.shape)

    return func


def extremal_ops(u_slice, bounds: ExtremalBounds, s, q: QuadratureScheme, grid: Grid):
    """Un-normalized ``M^+`` and ``M^-`` at every grid point.

    ``M^+ = int (Lam d^+ - lam d^-) / |y|^{1+2s}``, ``M^- = int (lam d^+ - Lam d^-) / |y|^{1+2s}``
    with ``d`` the symmetric second difference; the slice is extended
    periodically through a cubic spline.
    """
    s = as_order(s).s
    _check_samples(u_slice, grid)
    func = periodic_interpolant(u_slice, grid)
    tail = Tail.periodic(grid.period)
    lam, Lam = bounds.lam, bounds.Lam

    def fplus(d):
        return Lam * np.maximum(d, 0) - lam * np.maximum(-d, 0)

    def fminus(d):
        return lam * np.maximum(d, 0) - Lam * np.maximum(-d, 0)

    x = grid.x
    # factor 2: the full-line integral is twice the one over y > 0
    m_plus = 2 * _raw_integral(func, x, s, q, tail, transform=fplus)
    m_minus = 2 * _raw_integral(func, x, s, q, tail, transform=fminus)
    return m_plus, m_minus


# --- residuals ----------------------------------------------------------------

def time_derivative(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Second-order three-point derivative at interior levels (non-uniform safe)."""
    if times.size < 3:
        raise InsufficientTimeLevels("need at least 3 time levels")
    t0, t1, t2 = times[:-2, None], times[1:-1, None], times[2:, None]
    h1, h2 = t1 - t0, t2 - t1
    u0, u1, u2 = values[:-2], values[1:-1], values[2:]
    return (-h2 / (h1 * (h1 + h2))) * u0 + ((h2 - h1) / (h1 * h2)) * u1 + (h1 / (h2 * (h1 + h2))) * u2


def _forcing_rows(f, grid: Grid, times: np.ndarray) -> np.ndarray:
    if f is None:
        return np.zeros((times.size, grid.n_points))
    if isinstance(f, Field):
        from .core import interp_rows
        return interp_rows(f.times, f.values, times)
    return np.array([f(grid.x, t) for t in times])


def equation_residual(u: Field, b: DriftSpec, f, s, eps_visc: float = 0.0) -> Field:
    """``u_t + b u_x + (-Delta)^s u - eps u_xx - f`` at interior time levels."""
    s = as_order(s).s
    if eps_visc < 0:
        raise ValueError("viscosity must be nonnegative")
    g = u.grid
    times = u.times[1:-1]
    v = u.values[1:-1]
    ut = time_derivative(u.times, u.values)
    ux = spectral_derivative(v, g)
    bx = np.array([b(g.x, t) for t in times])
    res = ut + bx * ux + frac_lap_spectral(v, s, g) - _forcing_rows(f, g, times)
    if eps_visc:
        res = res - eps_visc * spectral_laplacian(v, g)
    return Field(g, times, res)


def inequality_residual(u: Field, A: float, s, eps_visc: float = 0.0) -> Field:
    """``u_t - A |u_x| + (-Delta)^s u - eps u_xx`` at interior time levels."""
    s = as_order(s).s
    g = u.grid
    v = u.values[1:-1]
    ut = time_derivative(u.times, u.values)
    res = ut - A * np.abs(spectral_derivative(v, g)) + frac_lap_spectral(v, s, g)
    if eps_visc:
        res = res - eps_visc * spectral_laplacian(v, g)
    return Field(g, u.times[1:-1], res)
