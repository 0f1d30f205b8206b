"""Stock drift fields.

Rules are small picklable callables so that problems can be shipped to
worker processes.  All stock drifts are autonomous (time independent).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .core import DriftSpec, Grid, holder_seminorm


@dataclass(frozen=True)
class ZeroRule:
    def __call__(self, x, t=0.0):
        return np.zeros(np.shape(x))


@dataclass(frozen=True)
class ConstantRule:
    value: float

    def __call__(self, x, t=0.0):
        return np.full(np.shape(x), self.value)


@dataclass(frozen=True, eq=False)
class FourierRule:
    """``scale * sum_k a_k cos(w_k x + phi_k)``, optionally clipped to ``[-clip, clip]``."""

    amps: np.ndarray
    freqs: np.ndarray
    phases: np.ndarray
    scale: float = 1.0
    clip: float = math.inf

    def raw(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for a, w, p in zip(self.amps, self.freqs, self.phases):
            out += a * np.cos(w * x + p)
        return self.scale * out

    def __call__(self, x, t=0.0):
        out = self.raw(x)
        if math.isfinite(self.clip):
            out = np.clip(out, -self.clip, self.clip)
        return out

    def holder_bound(self, exponent: float, period: float) -> float:
        """Certified ``sup_d d^-gamma sum_k 2|a_k| |sin(w_k d / 2)|`` over ``0 < d <= period/2``.

        Bounds the Hoelder seminorm of the unclipped sum from above; equals
        it for a single mode.
        """
        a = np.abs(self.scale * np.asarray(self.amps))
        w = np.asarray(self.freqs)

        def ratio(d):
            d = np.atleast_1d(d)
            return (2 * a[None, :] * np.abs(np.sin(0.5 * w[None, :] * d[:, None]))).sum(1) / d**exponent

        lo = 1e-3 / max(w.max(), 1e-300)
        d = np.geomspace(lo * 1e-3, 0.5 * period, 40_000)
        vals = ratio(d)
        best = float(vals.max())
        for i in np.argsort(vals)[::-1][:12]:
            a_, b_ = d[max(i - 1, 0)], d[min(i + 1, d.size - 1)]
            res = minimize_scalar(lambda z: -ratio(z)[0], bounds=(a_, b_), method="bounded",
                                  options={"xatol": 1e-14 * b_})
            best = max(best, -float(res.fun))
        return best


def zero() -> DriftSpec:
    return DriftSpec(ZeroRule(), 0.0, holder_seminorm=0.0, holder_exponent=1.0,
                     divergence_free=True, kind="zero", autonomous=True)


def constant(v0: float) -> DriftSpec:
    return DriftSpec(ConstantRule(float(v0)), abs(float(v0)), holder_seminorm=0.0,
                     holder_exponent=1.0, divergence_free=True, kind="constant", autonomous=True)


def rough_bounded(grid: Grid, sup_norm: float = 1.0, seed: int = 0, n_modes: int = 24,
                  overshoot: float = 1.5) -> DriftSpec:
    """Band-limited random Fourier drift, scaled past ``sup_norm`` then clipped to it.

    Wavenumbers are integer multiples of ``2 pi / L`` up to ``n_modes`` (kept
    below the grid Nyquist limit) with ``1/k`` amplitude decay.
    """
    rng = np.random.default_rng(seed)
    k = np.arange(1, n_modes + 1)
    amps = rng.standard_normal(n_modes) / k
    phases = rng.uniform(0, 2 * np.pi, n_modes)
    freqs = 2 * np.pi * k / grid.period
    rule = FourierRule(amps, freqs, phases)
    fine = np.linspace(-grid.half_width, grid.half_width, 8 * grid.n_points, endpoint=False)
    peak = max(np.max(np.abs(rule.raw(fine))), np.max(np.abs(rule.raw(grid.x))))
    if sup_norm == 0 or peak == 0:
        return zero()
    rule = FourierRule(amps, freqs, phases, scale=overshoot * sup_norm / peak, clip=sup_norm)
    measured = float(np.max(np.abs(rule(grid.x))))
    return DriftSpec(rule, measured, kind="rough_bounded", autonomous=True,
                     meta={"seed": int(seed), "n_modes": int(n_modes), "declared_sup_norm": sup_norm})


def holder(grid: Grid, exponent: float, seminorm: float = 1.0, seed: int = 0,
           base_wavenumber: int = 8, lacunarity: int = 2, n_terms=24) -> DriftSpec:
    """Weierstrass-type sum ``sum_j lacunarity^(-gamma j) cos(w0 lacunarity^j x + phi_j)``.

    Amplitudes are scaled so the certified seminorm bound equals ``seminorm``.
    Frequencies stay multiples of ``2 pi / L`` so the drift is periodic.  The
    top terms oscillate far below the grid spacing on purpose: the analysis
    of small cylinders uses the closed form, the solver only its samples.
    ``n_terms=None`` stops the sum at half the grid Nyquist frequency instead.
    """
    rng = np.random.default_rng(seed)
    w0 = 2 * np.pi * base_wavenumber / grid.period
    if n_terms is None:
        nyquist = np.pi / grid.h
        n_terms = max(1, int(math.floor(math.log(0.5 * nyquist / w0, lacunarity))) + 1)
    j = np.arange(n_terms)
    freqs = w0 * float(lacunarity) ** j
    amps = float(lacunarity) ** (-exponent * j) * w0 ** (-exponent)
    phases = rng.uniform(0, 2 * np.pi, n_terms)
    rule = FourierRule(amps, freqs, phases)
    bound = rule.holder_bound(exponent, grid.period)
    rule = FourierRule(amps, freqs, phases, scale=seminorm / bound)
    fine = np.linspace(-grid.half_width, grid.half_width, 16 * grid.n_points, endpoint=False)
    sup = max(float(np.max(np.abs(rule(fine)))), float(np.max(np.abs(rule(grid.x)))))
    return DriftSpec(rule, sup, holder_seminorm=float(seminorm), holder_exponent=float(exponent),
                     kind="holder", autonomous=True,
                     meta={"seed": int(seed), "n_terms": int(n_terms), "lacunarity": int(lacunarity),
                           "base_wavenumber": int(base_wavenumber)})


def from_callable(func, grid: Grid, exponent=None, kind="custom") -> DriftSpec:
    """Wrap an autonomous callable ``func(x)``; norms are measured numerically."""
    rule = _Autonomous(func)
    fine = np.linspace(-grid.half_width, grid.half_width, 8 * grid.n_points, endpoint=False)
    sup = float(np.max(np.abs(func(fine))))
    semi = None if exponent is None else holder_seminorm(func, exponent, grid.period)
    return DriftSpec(rule, sup, holder_seminorm=semi, holder_exponent=exponent, kind=kind,
                     autonomous=True)


@dataclass(frozen=True)
class _Autonomous:
    func: object

    def __call__(self, x, t=0.0):
        return self.func(np.asarray(x, dtype=float))
