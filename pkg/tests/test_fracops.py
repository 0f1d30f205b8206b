import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracdrift import drifts
from fracdrift.core import Field, Forcing, Grid
from fracdrift.fracops import (
    ExtremalBounds, QuadratureScheme, Tail, TailError, calibrate_normalization, calibrated,
    equation_residual, exact_normalization, extremal_ops, frac_lap_quadrature, frac_lap_spectral,
    inequality_residual, periodic_interpolant, time_derivative,
)

S_VALUES = (0.25, 0.5, 0.75)


@pytest.fixture(scope="module")
def schemes():
    return {s: calibrated(s) for s in S_VALUES}


def test_spectral_constant_is_zero():
    g = Grid(2 * math.pi, 64)
    assert np.max(np.abs(frac_lap_spectral(np.full(64, 3.0), 0.3, g))) < 1e-13


@pytest.mark.parametrize("s", S_VALUES)
def test_spectral_unit_frequency(s):
    g = Grid(2 * math.pi, 64)
    assert np.allclose(frac_lap_spectral(np.cos(g.x), s, g), np.cos(g.x), atol=1e-13)


def test_spectral_second_frequency():
    g = Grid(2 * math.pi, 64)
    assert np.allclose(frac_lap_spectral(np.cos(2 * g.x), 0.5, g), 2 * np.cos(2 * g.x), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000), s=st.floats(0.05, 0.95))
def test_spectral_linearity(a, b, seed, s):
    g = Grid(2 * math.pi, 128)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, 128))
    lhs = frac_lap_spectral(a * u + b * v, s, g)
    rhs = a * frac_lap_spectral(u, s, g) + b * frac_lap_spectral(v, s, g)
    assert np.max(np.abs(lhs - rhs)) <= 1e-11 * (1 + abs(a) + abs(b))


@pytest.mark.parametrize("s", S_VALUES)
def test_calibration_matches_closed_form(s, schemes):
    # the closed-form constant is independent of the calibration path
    assert schemes[s].c == pytest.approx(exact_normalization(s), rel=1e-6)
    assert schemes[s].c > 0


@pytest.mark.parametrize("s", S_VALUES)
def test_quadrature_cos_at_origin(s, schemes):
    val = frac_lap_quadrature(np.cos, 0.0, s, schemes[s], Tail.periodic(2 * math.pi))
    assert val == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("s", S_VALUES)
def test_quadrature_second_frequency(s, schemes):
    f = lambda z: np.cos(2 * z)
    val = frac_lap_quadrature(f, 0.0, s, schemes[s], Tail.periodic(2 * math.pi))
    assert val == pytest.approx(2 ** (2 * s), abs=1e-5)


def test_quadrature_constant_is_zero(schemes):
    f = lambda z: np.full(np.shape(z), 4.0)
    assert frac_lap_quadrature(f, 0.3, 0.5, schemes[0.5], Tail.periodic(2 * math.pi)) == 0.0


def _bump(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    m = np.abs(z) < 2
    out[m] = np.exp(1 - 1 / (1 - (z[m] / 2) ** 2))
    return out


@pytest.mark.parametrize("s", S_VALUES)
def test_quadrature_negative_outside_support(s, schemes):
    xs = np.array([2.5, 3.0, -3.0, 5.0, 20.0])
    vals = frac_lap_quadrature(_bump, xs, s, schemes[s], Tail.compact(2.0))
    assert np.all(vals < 0)


def test_calibration_stable_under_rho_refinement():
    cs = [calibrate_normalization(0.5, QuadratureScheme(rho=rho)) for rho in (1e-3, 5e-4, 2.5e-4)]
    assert max(cs) - min(cs) < 1e-6


def test_unknown_tail_kind():
    with pytest.raises(TailError):
        Tail("mystery")


def test_power_tail_matches_compact_tail(schemes):
    # a compactly supported function also has every power-growth tail
    xs = np.array([0.0, 0.7, 3.0])
    a = frac_lap_quadrature(_bump, xs, 0.5, schemes[0.5], Tail.compact(2.0))
    b = frac_lap_quadrature(_bump, xs, 0.5, schemes[0.5], Tail.power(0.5))
    assert np.allclose(a, b, atol=1e-4)


def test_extremal_equal_bounds_match_quadrature(schemes):
    g = Grid(2 * math.pi, 64)
    u = np.cos(g.x) + 0.3 * np.sin(3 * g.x)
    q = schemes[0.5]
    mp, mm = extremal_ops(u, ExtremalBounds(1.0, 1.0), 0.5, q, g)
    ref = frac_lap_quadrature(periodic_interpolant(u, g), g.x, 0.5, q, Tail.periodic(g.period))
    assert np.allclose(mp, mm, atol=1e-12)
    assert np.allclose(mp, -(2 / q.c) * ref, atol=1e-6)


def test_extremal_constant_and_order(schemes):
    g = Grid(2 * math.pi, 32)
    q = schemes[0.25]
    mp, mm = extremal_ops(np.full(32, 2.0), ExtremalBounds(0.5, 2.0), 0.25, q, g)
    assert np.allclose(mp, 0) and np.allclose(mm, 0)
    rng = np.random.default_rng(3)
    u = np.convolve(np.tile(rng.standard_normal(32), 3), np.ones(5) / 5, "same")[32:64]
    mp, mm = extremal_ops(u, ExtremalBounds(0.5, 2.0), 0.25, q, g)
    assert np.all(mp >= mm - 1e-12)


def test_time_derivative_quadratic_exact():
    t = np.array([0.0, 0.1, 0.25, 0.3, 0.7])
    vals = (t**2)[:, None] * np.ones((1, 4))
    assert np.allclose(time_derivative(t, vals), (2 * t[1:-1])[:, None], atol=1e-12)


@pytest.mark.parametrize("s", S_VALUES)
def test_equation_residual_exact_solution(s):
    g = Grid(2 * math.pi, 64)
    res = []
    for dt in (1e-2, 5e-3):
        u = Field.from_function(g, np.arange(0, 0.5 + 1e-12, dt), lambda x, t: np.exp(-t) * np.cos(x))
        res.append(equation_residual(u, drifts.zero(), Forcing.zero(), s).sup_norm())
    assert res[0] < 1e-4
    assert res[0] / res[1] == pytest.approx(4, rel=0.05)  # second order in time


def test_equation_residual_constant_field():
    g = Grid(2 * math.pi, 32)
    u = Field.from_function(g, [0, 0.1, 0.2], lambda x, t: 0 * x + 1.5)
    assert equation_residual(u, drifts.constant(0.7), Forcing.zero(), 0.5).sup_norm() < 1e-14
    assert inequality_residual(u, 1.0, 0.5).sup_norm() < 1e-14
