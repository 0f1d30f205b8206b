import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracdrift import drifts
from fracdrift.barrier import (
    CYLINDER_MEASURE, UNIT_BALL, BarrierKit, BatteryConfig, BumpProfile, HypothesisViolated,
    MeasureSeries, ball_weights, eta, find_beta1, solve_m, supersolution_gap, verify_beta1,
    verify_point_estimate,
)
from fracdrift.core import Field, Grid, effective_radius
from fracdrift.solver import Problem, Trajectory, solve


def _kit(**kw):
    base = dict(s=0.5, A=1.0, mu=1.0, c0=0.1, C1=0.5, eps0=0.01)
    base.update(kw)
    return BarrierKit(**base)


def test_bump_shape():
    beta = BumpProfile()
    x = np.linspace(-1, 3, 10001)
    v = beta(x)
    assert beta(np.array([1.0]))[0] == 1.0 and beta(np.array([2.0]))[0] == 0.0
    assert np.all(np.diff(v) <= 1e-15)
    assert np.all((v >= 0) & (v <= 1))
    # derivative agrees with finite differences and has a bounded sup
    xm = 0.5 * (x[1:] + x[:-1])
    fd = np.diff(v) / np.diff(x)
    assert np.max(np.abs(fd - beta.derivative(xm))) < 1e-3
    assert 0 < beta.sup_derivative() < 10


def test_bump_second_difference_continuous():
    beta = BumpProfile()
    x = np.linspace(0.5, 2.5, 20001)
    h = x[1] - x[0]
    d2 = (beta(x[2:]) - 2 * beta(x[1:-1]) + beta(x[:-2])) / h**2
    # no jumps in the sampled second derivative, including at the junctions x = 1, 2
    assert np.max(np.abs(np.diff(d2))) < 0.05


def test_eta_values_and_support():
    kit = _kit(A=1.0)
    assert eta(0.0, 0.0, kit) == 1.0
    for t in (-2.0, -1.0, -0.3, 0.0):
        edge = 2 + kit.A * abs(t)
        x = np.linspace(edge, edge + 3, 50)
        assert np.all(eta(x, t, kit) == 0)
        xs = np.linspace(0, edge + 1, 500)
        assert np.all(np.diff(eta(xs, t, kit)) <= 1e-15)
    with pytest.raises(ValueError):
        eta(0.0, 0.5, kit)


def test_eta_gradient_bounded_by_bump():
    kit = _kit(A=0.7)
    x = np.linspace(-4, 4, 40001)
    g = np.abs(np.diff(eta(x, -0.5, kit))) / (x[1] - x[0])
    assert g.max() <= kit.bump.sup_derivative() + 1e-6


@settings(max_examples=40, deadline=None)
@given(c0=st.floats(1e-3, 1.0), C1=st.floats(1e-2, 5.0), mu=st.floats(1e-3, CYLINDER_MEASURE))
def test_theta_formula(c0, C1, mu):
    kit = BarrierKit(0.5, 1.0, mu, c0, C1, 0.01)
    assert kit.theta == c0 * math.exp(-2 * C1) * mu / 2
    half = BarrierKit(0.5, 1.0, mu / 2, c0, C1, 0.01)
    assert half.theta == pytest.approx(kit.theta / 2, rel=1e-15)


def test_kit_json_roundtrip(tmp_path):
    kit = _kit(beta1=0.4)
    kit.write(tmp_path / "k.json")
    import json
    back = BarrierKit.from_json(json.loads((tmp_path / "k.json").read_text()))
    assert back == kit
    bad = kit.to_json()
    bad["theta"] *= 1.1
    with pytest.raises(ValueError):
        BarrierKit.from_json(bad)


def test_ball_weights_total():
    g = Grid(4 * math.pi, 1024)
    assert ball_weights(g).sum() == pytest.approx(UNIT_BALL, abs=1e-12)


def test_m_zero_measure():
    t = np.linspace(-2, 0, 201)
    m = solve_m(MeasureSeries.constant(0.0, t), 0.1, 0.5)
    assert np.all(m.values == 0)


def test_m_constant_measure_closed_form():
    t = np.linspace(-2, 0, 4001)
    c0, C1, mu = 0.2, 0.7, 1.3
    m = solve_m(MeasureSeries.constant(mu, t), c0, C1)
    exact = (c0 * mu / C1) * (1 - np.exp(-C1 * (t + 2)))
    assert np.max(np.abs(m.values - exact)) < 1e-7


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_m_monotone_in_measure(seed):
    rng = np.random.default_rng(seed)
    t = np.sort(np.concatenate([[-2.0, 0.0], rng.uniform(-2, 0, 40)]))
    t = np.unique(t)
    lo = rng.uniform(0, 1, t.size)
    hi = np.minimum(lo + rng.uniform(0, 1, t.size), UNIT_BALL)
    m_lo = solve_m(MeasureSeries(t, lo), 0.3, 0.9)
    m_hi = solve_m(MeasureSeries(t, hi), 0.3, 0.9)
    assert np.all(m_hi.values >= m_lo.values - 1e-15)


def test_m_lower_bound_on_late_times():
    rng = np.random.default_rng(4)
    t = np.linspace(-2, 0, 801)
    g = rng.uniform(0, UNIT_BALL, t.size)
    c0, C1 = 0.15, 0.4
    m = solve_m(MeasureSeries(t, g), c0, C1)
    good = MeasureSeries(t, g).integral(-2, -1)
    late = t >= -1
    assert np.all(m.values[late] >= c0 * math.exp(-2 * C1) * good - 1e-6)


@pytest.mark.parametrize("s", (0.25, 0.5, 0.75))
def test_beta1_certificate(s):
    kit = _kit(s=s, A=1.0)
    cert = find_beta1(kit)
    assert 0 < cert.level < 1
    assert cert.level < cert.threshold
    assert verify_beta1(kit, cert.level) <= 0


def test_beta1_exterior_negative():
    # where eta = 0 the fractional Laplacian of the bump is strictly negative
    from fracdrift.barrier import _eta_lap
    from fracdrift.fracops import calibrated
    kit = _kit(A=1.0)
    q = calibrated(0.5)
    for t in (-2.0, -1.0, 0.0):
        edge = 2 + abs(t)
        x = np.linspace(edge + 1e-3, edge + 4, 30)
        assert np.all(_eta_lap(kit.bump, kit.A, t, 0.5, q, x) < 0)


def _constant_trajectory(value, n=512, period=8 * math.pi):
    g = Grid(period, n)
    p = Problem(0.5, g, drifts.zero(), np.full(n, value), t_span=(-2, 0), dt=1e-2)
    return solve(p)


def test_gap_for_zero_field():
    kit = _kit()
    rep = supersolution_gap(_constant_trajectory(0.0), kit)
    assert rep.hypotheses.mu_ok
    assert rep.gap >= kit.theta


def test_gap_for_field_at_ceiling():
    kit = _kit()
    rep = supersolution_gap(_constant_trajectory(1.0), kit)
    assert not rep.hypotheses.mu_ok
    # barrier reduces to 1 + eps0 (2 + t); the minimum sits at t = -1
    assert rep.gap == pytest.approx(kit.eps0 * 1.0, abs=1e-12)


def test_gap_rejects_ceiling_violation():
    with pytest.raises(HypothesisViolated):
        supersolution_gap(_constant_trajectory(1.5), _kit())


def test_point_estimate_trivial_cases():
    kit = _kit()
    v0 = verify_point_estimate(_constant_trajectory(0.0), kit)
    assert v0.hypotheses_ok and v0.passed
    v1 = verify_point_estimate(_constant_trajectory(1.0), kit)
    assert not v1.hypotheses_ok and "mu_ok" in v1.violated


def test_battery_config_widens_torus():
    cfg = BatteryConfig.for_kit(0.25, 1.0)
    assert cfg.period / 2 >= 2 * effective_radius(0.25, 1.0)
    assert cfg.period / cfg.n_points == pytest.approx(4 * math.pi / 4096)
    assert BatteryConfig.for_kit(0.5, 1.0).period == 4 * math.pi
