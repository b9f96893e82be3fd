import math

import pytest

from flowtrees.flow import (
    ChartEnd,
    CriticalEnd,
    FoldEnd,
    TransversalityViolation,
    flows_equal,
    integrate_descending,
    integrate_maximal,
    jet_lift,
)


def _rk4_hit_time(deriv, x0, stop, h=1e-6):
    """Fine-step RK4 oracle for a scalar ODE, stops when x <= stop."""
    t, x = 0.0, x0
    while x > stop:
        k1 = deriv(x)
        k2 = deriv(x + 0.5 * h * k1)
        k3 = deriv(x + 0.5 * h * k2)
        k4 = deriv(x + h * k3)
        x += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return t


def test_tanh_flow(double_well):
    # dx/dt = 1 - x^2 from 0 is exactly tanh(t); the seed sits at t = 0
    F = double_well.difference(1, 2)
    fl = integrate_maximal(F, [0.0])
    worst = 0.0
    for k in range(-60, 61):
        t = 0.1 * k
        if t <= fl.times[0] or t >= fl.times[-1]:
            continue
        worst = max(worst, abs(fl.point(t)[0] - math.tanh(t)))
    assert worst <= 1e-6


def test_flow_ends(double_well):
    F = double_well.difference(1, 2)
    fl = integrate_maximal(F, [0.0])
    assert isinstance(fl.start_event, CriticalEnd)
    assert fl.start_event.cp.location == (-1.0,)
    assert fl.end_event.cp.location == (1.0,)
    assert fl.flow_class.kind == "morse"


def test_f_monotone(double_well):
    F = double_well.difference(1, 2)
    fl = integrate_maximal(F, [0.0])
    assert all(a >= b for a, b in zip(fl.fvalues, fl.fvalues[1:]))
    assert fl.f_start == pytest.approx(2.0 / 3.0, abs=1e-8)
    assert fl.f_end == pytest.approx(-2.0 / 3.0, abs=1e-8)


def test_point_at_value(double_well):
    F = double_well.difference(1, 2)
    fl = integrate_maximal(F, [0.0])
    p = fl.point_at_value(0.0)
    assert p[0] == pytest.approx(0.0, abs=1e-8)


def test_fold_hit_location_and_time(cusp_2d):
    # on the fold axis, dx/dt = -sqrt(2x) * d/dx[(2/3)(2x)^{3/2}] = -2x... the
    # closed-form hit time from x0 is sqrt(2 x0)/2
    F = cusp_2d.difference(1, 2)
    for x0 in (0.125, 0.5):
        fl = integrate_descending(F, [x0, 0.0])
        assert isinstance(fl.end_event, FoldEnd)
        assert fl.end_event.point[0] == pytest.approx(0.0, abs=1e-9)
        hit = fl.times[-1] - 0.0
        assert hit == pytest.approx(math.sqrt(2 * x0) / 2, abs=1e-4)
        assert fl.end_event.contact_order == 1


def test_singular_flow_hit_times(lip_1d):
    # F_13 has F' = sqrt(2x) + sqrt(2(1-x)) > 0; both ends hit folds
    F = lip_1d.difference(1, 3)
    fl = integrate_maximal(F, [0.5])
    assert fl.flow_class.kind == "singular"
    assert fl.points[0][0] == pytest.approx(1.0, abs=1e-9)
    assert fl.points[-1][0] == pytest.approx(0.0, abs=1e-9)
    def deriv(x):
        return -(math.sqrt(max(2 * x, 0.0)) + math.sqrt(max(2 * (1 - x), 0.0)))

    oracle = _rk4_hit_time(deriv, 0.5, 1e-9)
    assert fl.times[-1] == pytest.approx(oracle, abs=1e-4)


def test_classification_table(double_well, fold_morse, lip_1d, torus):
    cases = [
        (double_well, (1, 2), [0.0], "morse"),
        (fold_morse, (1, 3), [0.25], "fold_terminating"),
        (fold_morse, (3, 1), [0.25], "fold_emanating"),
        (lip_1d, (1, 3), [0.5], "singular"),
        (torus, (1, 2), [0.25, 0.125], "morse"),
    ]
    for sc, pair, x0, expect in cases:
        fl = integrate_maximal(sc.difference(*pair), x0)
        assert fl.flow_class.kind == expect


def test_chart_truncation(double_well):
    # start far outside the basin: ascending end leaves the chart
    F = double_well.difference(1, 2)
    fl = integrate_maximal(F, [2.0])
    assert isinstance(fl.start_event, ChartEnd) or isinstance(
        fl.end_event, ChartEnd
    )
    assert fl.flow_class.kind == "chart_truncated"


def test_flows_equal_reparameterization(double_well):
    F = double_well.difference(1, 2)
    a = integrate_maximal(F, [0.0])
    b = integrate_maximal(F, [0.3])  # same unparameterized flow, other seed
    c = integrate_maximal(
        double_well.difference(1, 2), [0.0]
    )
    assert flows_equal(a, b)
    assert flows_equal(a, c)


def test_periodic_flow(torus):
    F = torus.difference(1, 2)
    fl = integrate_maximal(F, [0.25, 0.125])
    assert fl.start_event.cp.location == (0.0, 0.0)
    assert fl.end_event.cp.location == (0.5, 0.5)
    for p in fl.points:
        assert torus.chart.contains(torus.chart.wrap(p))


def test_tangential_fold_contact(cusp_tangent, cusp_2d):
    # the cusp-vs-bowl difference approaches the fold tangentially: order 2
    F = cusp_tangent.difference(1, 3)
    fl = integrate_maximal(F, [0.5, 0.2])
    assert isinstance(fl.end_event, FoldEnd)
    assert fl.end_event.contact_order == 2
    # the plain cusp pair hits head-on: order 1, at any approach angle
    G = cusp_2d.difference(1, 2)
    for x0 in ([0.5, 0.0], [0.5, 0.3]):
        gl = integrate_maximal(G, x0)
        assert isinstance(gl.end_event, FoldEnd)
        assert gl.end_event.contact_order == 1


def test_jet_lift_meetings(lip_1d, double_well):
    F = lip_1d.difference(1, 3)
    fl = integrate_maximal(F, [0.5])
    lift = jet_lift(fl)
    # both endpoints lie on folds of this pair's cusps? only folds owned by
    # the pair itself count as meetings; here each fold owns one sheet only
    assert lift.track1[0][1] == 1 and lift.track2[0][1] == 3
    G = double_well.difference(1, 2)
    mfl = integrate_maximal(G, [0.0])
    assert jet_lift(mfl).meetings == ()
