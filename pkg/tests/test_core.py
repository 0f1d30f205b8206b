import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracdrift.core import (
    Cylinder, CylinderOutOfRange, DomainExceeded, Field, FractionalOrder, Grid, Regime,
    ScalingParams, aligned_rescale_target, effective_radius, holder_seminorm, oscillation,
    read_field, rescale, write_field,
)


def test_order_regimes():
    assert FractionalOrder(0.25).regime is Regime.SUPERCRITICAL
    assert FractionalOrder(0.5).regime is Regime.CRITICAL
    assert FractionalOrder(0.75).regime is Regime.SUBCRITICAL
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            FractionalOrder(bad)


def test_grid_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        Grid(2 * math.pi, 100)
    g = Grid(2 * math.pi, 64)
    assert g.h == pytest.approx(2 * math.pi / 64)
    assert g.x[0] == pytest.approx(-math.pi)


def test_field_validation():
    g = Grid(2 * math.pi, 16)
    with pytest.raises(ValueError):
        Field(g, [0.0, 0.0], np.zeros((2, 16)))
    with pytest.raises(ValueError):
        Field(g, [0.0], np.full(16, np.nan))
    with pytest.raises(ValueError):
        Field(g, [0.0, 1.0], np.zeros((3, 16)))


def test_oscillation_constant_is_zero():
    g = Grid(2 * math.pi, 64)
    u = Field.from_function(g, np.linspace(-1, 0, 5), lambda x, t: 3.0 + 0 * x)
    assert oscillation(u, Cylinder((0, 0), 1.0, 0.5)) == 0.0


def test_oscillation_of_cos_over_full_period():
    # cos x on L = 2 pi has its max at x = 0 and its min at x = -pi on the grid
    g = Grid(2 * math.pi, 256)
    u = Field.from_function(g, np.linspace(-4, 0, 3), lambda x, t: np.cos(x))
    Q = Cylinder((0, 0), math.pi - g.h, 0.5)
    assert oscillation(u, Q) == pytest.approx(1 - np.cos(math.pi - g.h), abs=1e-12)
    assert abs(oscillation(u, Q) - 2) <= g.h**2


def test_oscillation_monotone_under_inclusion():
    g = Grid(4 * math.pi, 512)
    rng = np.random.default_rng(0)
    u = Field(g, np.linspace(-2, 0, 21), rng.standard_normal((21, 512)))
    big = Cylinder((0, 0), 2.0, 0.5)
    small = Cylinder((0.3, -0.1), 0.5, 0.5)
    assert oscillation(u, small) <= oscillation(u, big)


def test_cylinder_out_of_range():
    g = Grid(2 * math.pi, 64)
    u = Field.from_function(g, np.linspace(-1, 0, 3), lambda x, t: np.cos(x))
    with pytest.raises(CylinderOutOfRange):
        oscillation(u, Cylinder((0, 0), 4.0, 0.5))
    with pytest.raises(CylinderOutOfRange):
        oscillation(u, Cylinder((0, 0), 2.0, 0.5))  # depth 2 > sampled span 1


@settings(max_examples=25, deadline=None)
@given(shift=st.integers(-20, 20), tshift=st.integers(0, 5))
def test_oscillation_translation_invariant(shift, tshift):
    g = Grid(4 * math.pi, 256)
    times = np.linspace(-2, 0, 21)
    rng = np.random.default_rng(1)
    base = rng.standard_normal((21, 256))
    u = Field(g, times, base)
    # shift by whole samples in x and whole levels in t
    moved = Field(g, times, np.roll(np.roll(base, shift, axis=1), -tshift, axis=0))
    Q = Cylinder((0.0, -0.5), 0.7, 0.5)
    Qm = Cylinder((shift * g.h, -0.5 - tshift * 0.1), 0.7, 0.5)
    assert oscillation(moved, Qm) == oscillation(u, Q)


def test_rescale_linear_function_is_fixed():
    g = Grid(8.0, 256)
    u = Field.from_function(g, np.linspace(-2, 0, 9), lambda x, t: x + 0 * t)
    # lam = 1/2 maps the smaller grid onto the source; u = x is homogeneous of degree 1
    w = rescale(u, ScalingParams(0.5, 1.0, 0.5), Grid(4.0, 256), np.linspace(-4, 0, 9))
    assert np.allclose(w.values, w.x[None, :], atol=1e-12)


def test_rescale_constant():
    g = Grid(2 * math.pi, 64)
    u = Field.from_function(g, np.linspace(-1, 0, 5), lambda x, t: 2.0 + 0 * x)
    w = rescale(u, ScalingParams(0.5, 0.5, 0.5))
    assert np.allclose(w.values, 0.5**-0.5 * 2.0)


def test_rescale_outside_domain():
    g = Grid(2 * math.pi, 64)
    u = Field.from_function(g, np.linspace(-1, 0, 5), lambda x, t: np.cos(x))
    with pytest.raises(DomainExceeded):
        rescale(u, ScalingParams(2.0, 0.5, 0.5))


def test_scaling_alpha_limited_by_2s():
    with pytest.raises(ValueError):
        ScalingParams(0.5, 0.6, 0.25)


def test_rescale_composes():
    g = Grid(4 * math.pi, 1024)
    times = np.linspace(-4, 0, 161)
    u = Field.from_function(g, times, lambda x, t: np.cos(x / 2) * np.exp(0.1 * t) + 0.2 * np.sin(x))
    s, alpha = 0.5, 0.5
    grid_out = Grid(2.0, 256)
    t_out = np.linspace(-0.2, 0, 5)
    two = rescale(rescale(u, ScalingParams(0.5, alpha, s), Grid(2 * math.pi, 1024),
                          np.linspace(-2, 0, 161)),
                  ScalingParams(0.5, alpha, s), grid_out, t_out)
    one = rescale(u, ScalingParams(0.25, alpha, s), grid_out, t_out)
    assert np.max(np.abs(two.values - one.values)) < 1e-4


@settings(max_examples=20, deadline=None)
@given(r=st.floats(0.01, 3.0), lam=st.floats(0.05, 2.0), s=st.floats(0.05, 0.95))
def test_cylinder_scaling(r, lam, s):
    Q = Cylinder((0.1, -0.2), r, s).scaled(lam)
    assert Q.r == pytest.approx(lam * r)
    assert Q.depth == pytest.approx((lam * r) ** (2 * s))


def test_effective_radius_values():
    assert effective_radius(0.5, 1.0) == 3.0
    assert effective_radius(0.3, 0.0) == 2.0
    assert effective_radius(0.25, 1.0) == pytest.approx(4.0, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(s=st.floats(0.05, 0.95), a=st.floats(0, 5), b=st.floats(0, 5))
def test_effective_radius_monotone(s, a, b):
    lo, hi = sorted((a, b))
    assert effective_radius(s, lo) <= effective_radius(s, hi) + 1e-12


@settings(max_examples=30, deadline=None)
@given(s=st.floats(0.05, 0.49), b=st.floats(0.01, 5))
def test_effective_radius_fixed_point(s, b):
    R = effective_radius(s, b)
    assert R == pytest.approx(R ** (1 - 2 * s) * b + 2, rel=1e-9)


def test_holder_seminorm_of_sqrt_abs():
    # |x|^(1/2) restricted to one period has seminorm 1 at exponent 1/2 near the origin
    L = 2.0
    f = lambda x: np.sqrt(np.abs((np.asarray(x) + 1) % L - 1))
    val = holder_seminorm(f, 0.5, L)
    assert 1.0 - 1e-6 <= val <= math.sqrt(2) + 1e-6


def test_field_binary_roundtrip(tmp_path):
    g = Grid(3.0, 32)
    rng = np.random.default_rng(2)
    u = Field(g, [0.0, 0.5, 1.25], rng.standard_normal((3, 32)))
    write_field(tmp_path / "u.bin", u, 0.5)
    v, s = read_field(tmp_path / "u.bin")
    assert s == 0.5 and v.grid == g
    assert np.array_equal(v.values, u.values) and np.array_equal(v.times, u.times)
