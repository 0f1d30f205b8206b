"""First-order IMEX time stepping for ``u_t + b u_x + (-Delta)^s u - eps u_xx = f``.

Advection is explicit first-order upwind; the diffusion multiplier
``|xi|^(2s) + eps |xi|^2`` is inverted exactly in frequency space.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DriftSpec, Field, Forcing, FractionalOrder, Grid, as_order

log = logging.getLogger(__name__)


class CFLViolation(ValueError):
    pass


class BlowUp(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Problem:
    s: FractionalOrder
    grid: Grid
    b: DriftSpec
    u0: np.ndarray
    f: Forcing = field(default_factory=Forcing.zero)
    eps_visc: float = 0.0
    t_span: tuple = (-2.0, 0.0)
    dt: float = 1e-3
    dense_window: float = 1.0
    coarse_stride: int = 10
    head_window: float = 0.0
    store: str = "dense"

    def __post_init__(self):
        object.__setattr__(self, "s", as_order(self.s))
        u0 = np.array(self.u0, dtype=float)
        if u0.shape != (self.grid.n_points,):
            raise ValueError("u0 must have one value per grid point")
        if not np.all(np.isfinite(u0)):
            raise ValueError("u0 must be finite")
        u0.setflags(write=False)
        object.__setattr__(self, "u0", u0)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.eps_visc < 0:
            raise ValueError("eps_visc must be nonnegative")
        if self.store not in ("dense", "geometric"):
            raise ValueError("store must be 'dense' or 'geometric'")
        t0, t1 = map(float, self.t_span)
        if not t1 > t0:
            raise ValueError("t_span must be increasing")
        object.__setattr__(self, "t_span", (t0, t1))
        if self.b.sup_norm > 0 and self.dt > self.grid.h / (2 * self.b.sup_norm) * (1 + 1e-12):
            raise CFLViolation(
                f"dt={self.dt} exceeds h/(2|b|)={self.grid.h / (2 * self.b.sup_norm):.4g}"
            )

    @property
    def n_steps(self) -> int:
        t0, t1 = self.t_span
        return max(1, int(math.ceil((t1 - t0) / self.dt - 1e-9)))

    @property
    def dt_eff(self) -> float:
        t0, t1 = self.t_span
        return (t1 - t0) / self.n_steps

    @property
    def viscosity_below_one(self) -> bool:
        """The vanishing-viscosity point estimate needs ``eps < 1``."""
        return self.eps_visc < 1

    @property
    def cfl_margin(self) -> float:
        if self.b.sup_norm == 0:
            return 1.0
        return 1.0 - 2 * self.b.sup_norm * self.dt / self.grid.h

    def symbol(self) -> np.ndarray:
        xi = self.grid.xi
        return xi ** (2 * self.s.s) + self.eps_visc * xi**2


def resolvent_kernel(p: Problem) -> np.ndarray:
    """Grid kernel of ``(1 + dt L)^-1``; the implicit half is monotone iff it is >= 0."""
    return np.fft.irfft(1.0 / (1.0 + p.dt_eff * p.symbol()), p.grid.n_points)


def step_is_monotone(p: Problem, tol: float = 1e-14) -> bool:
    return bool(resolvent_kernel(p).min() >= -tol)


class _Stepper:
    def __init__(self, p: Problem):
        self.p = p
        self.dt = p.dt_eff
        self.inv = 1.0 / (1.0 + self.dt * p.symbol())
        self.x = p.grid.x
        self.h = p.grid.h
        self._b = p.b.sample(p.grid) if p.b.autonomous else None

    def drift(self, t):
        return self._b if self._b is not None else self.p.b(self.x, t)

    def __call__(self, u, t):
        b = self.drift(t)
        back = (u - np.roll(u, 1)) / self.h
        fwd = (np.roll(u, -1) - u) / self.h
        adv = np.where(b > 0, b * back, b * fwd)
        rhs = u - self.dt * adv
        if not self.p.f.is_zero:
            rhs = rhs + self.dt * self.p.f(self.x, t)
        out = np.fft.irfft(self.inv * np.fft.rfft(rhs), self.p.grid.n_points)
        if not np.all(np.isfinite(out)):
            raise BlowUp(f"non-finite state after step at t={t:.6g}")
        return out


def step(state, t: float, p: Problem) -> np.ndarray:
    """One IMEX step of size ``p.dt_eff`` from time ``t``."""
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        raise ValueError("state must be finite")
    return _Stepper(p)(state, t)


@dataclass(frozen=True, eq=False)
class Trajectory:
    field: Field
    problem: Problem
    step_times: np.ndarray
    sup_series: np.ndarray
    inf_series: np.ndarray
    mean_series: np.ndarray
    monotone_step: bool
    max_principle_bound: np.ndarray

    @property
    def sup_norm_series(self) -> np.ndarray:
        return np.maximum(np.abs(self.sup_series), np.abs(self.inf_series))

    @property
    def max_principle_ok(self) -> bool:
        return bool(np.all(self.sup_series <= self.max_principle_bound))

    def max_relative_sup_increase(self) -> float:
        """Largest per-step growth of ``sup u`` relative to the current sup norm."""
        scale = np.maximum(self.sup_norm_series[:-1], 1e-300)
        return float(np.max(np.diff(self.sup_series) / scale, initial=-np.inf))

    def max_relative_inf_decrease(self) -> float:
        scale = np.maximum(self.sup_norm_series[:-1], 1e-300)
        return float(np.max(-np.diff(self.inf_series) / scale, initial=-np.inf))

    def diagnostics(self) -> dict:
        return {
            "sup_norm_series": self.sup_norm_series.tolist(),
            "mean_series": self.mean_series.tolist(),
            "cfl_margin": self.problem.cfl_margin,
        }

    def write_diagnostics(self, path) -> None:
        Path(path).write_text(json.dumps(self.diagnostics()))


def _keep_mask(p: Problem, step_times: np.ndarray) -> np.ndarray:
    n = step_times.size - 1
    t1 = p.t_span[1]
    idx = np.arange(n + 1)
    if p.store == "geometric":
        # steps counted back from the end; about 32 kept per octave
        j = n - idx
        stride = 2 ** np.floor(np.log2(np.maximum(j, 1) / 32.0)).clip(0).astype(int)
        keep = j % stride == 0
    else:
        dense_from = t1 - p.dense_window - 1e-12 * max(1.0, abs(t1))
        head_to = p.t_span[0] + p.head_window
        keep = (step_times >= dense_from) | (step_times <= head_to) | (idx % p.coarse_stride == 0)
    keep[0] = keep[-1] = True
    return keep


def solve(p: Problem) -> Trajectory:
    """Integrate over ``p.t_span``.

    With ``store="dense"`` every step inside the last ``dense_window`` time
    units or the first ``head_window`` units is kept and every
    ``coarse_stride``-th step in between; ``"geometric"``
    thins the stored levels geometrically away from the final time.
    """
    stepper = _Stepper(p)
    t0, t1 = p.t_span
    n = p.n_steps
    dt = stepper.dt
    u = np.array(p.u0)
    guard = 1e6 * max(np.max(np.abs(u)) + p.f.sup_norm, 1e-300)
    step_times = t0 + dt * np.arange(n + 1)
    step_times[-1] = t1
    sups, infs, means = np.empty(n + 1), np.empty(n + 1), np.empty(n + 1)
    sups[0], infs[0], means[0] = u.max(), u.min(), u.mean()
    keep = _keep_mask(p, step_times)
    keep_t, keep_u = [t0], [u.copy()]
    for k in range(n):
        u = stepper(u, step_times[k])
        if np.max(np.abs(u)) > guard:
            raise BlowUp(f"|u| exceeded {guard:.3g} at t={step_times[k + 1]:.6g}")
        sups[k + 1], infs[k + 1], means[k + 1] = u.max(), u.min(), u.mean()
        if keep[k + 1]:
            keep_t.append(step_times[k + 1])
            keep_u.append(u.copy())
    bound = p.u0.max() + (step_times - t0) * p.f.sup_norm + 1e-10 * max(1.0, np.abs(p.u0).max())
    return Trajectory(
        field=Field(p.grid, np.array(keep_t), np.array(keep_u)),
        problem=p,
        step_times=step_times,
        sup_series=sups,
        inf_series=infs,
        mean_series=means,
        monotone_step=step_is_monotone(p),
        max_principle_bound=bound,
    )


def vanishing_viscosity_sweep(p: Problem, eps_list: Sequence[float], jobs: int = 1) -> list:
    """One trajectory per viscosity, all other data identical."""
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("eps_list must be nonempty")
    if any(e < 0 for e in eps_list):
        raise ValueError("viscosities must be nonnegative")
    if any(a <= b for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly descending")
    problems = [replace(p, eps_visc=e) for e in eps_list]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(solve, problems))
    return [solve(q) for q in problems]
