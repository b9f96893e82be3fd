import math

import pytest

from flowtrees import DomainError, dump_scenario, load_fixture, loads_scenario


def test_chart_periodic_distance(torus):
    c = torus.chart
    assert c.distance([0.05, 0.0], [0.95, 0.0]) == pytest.approx(0.1)
    assert c.distance([0.5, 0.1], [0.5, 0.9]) == pytest.approx(0.2)
    w = c.wrap([1.25, -0.25])
    assert w[0] == pytest.approx(0.25) and w[1] == pytest.approx(0.75)


def test_chart_bounded_contains(double_well):
    c = double_well.chart
    assert c.contains([0.0])
    assert not c.contains([3.0])


def test_smooth_sheet_values(double_well):
    # sheet 2 carries x - x^3/3; sheet 1 is the zero sheet
    s = double_well.sheet(2)
    x = [0.5]
    assert s.value(x) == pytest.approx(0.5 - 0.125 / 3)
    assert s.grad(x)[0] == pytest.approx(1.0 - 0.25)
    assert s.hess(x)[0][0] == pytest.approx(-1.0)


def test_cusp_sheet_values(fold_morse):
    # upper branch of the cusp at x = 0: (1/3)(2x)^{3/2}
    s = fold_morse.sheet(1)
    x = [0.5]
    assert s.value(x) == pytest.approx((1.0 / 3.0) * 1.0)
    assert s.grad(x)[0] == pytest.approx(1.0)  # sqrt(2x) at x=1/2


def test_cusp_domain_error(fold_morse):
    s = fold_morse.sheet(1)
    with pytest.raises(DomainError):
        s.value([-0.25])
    # clamped evaluation extends continuously instead
    assert s.value([-0.25], clamp=True) == pytest.approx(s.value([0.0]))


def test_difference_antisymmetry(fold_morse):
    F = fold_morse.difference(1, 3)
    G = fold_morse.difference(3, 1)
    for x in ([0.1], [0.33], [0.8]):
        assert F.value(x) == pytest.approx(-G.value(x))
        assert F.grad(x)[0] == pytest.approx(-G.grad(x)[0])


def test_difference_value_oracle(fold_morse):
    # F_13(x) = (1/3)(2x)^{3/2} - x^2 at x = 1/2 equals 1/3 - 1/4
    F = fold_morse.difference(1, 3)
    assert F.value([0.5]) == pytest.approx(1.0 / 3.0 - 0.25)


def test_fold_locus_derived(lip_1d):
    comps = lip_1d.folds.components
    assert len(comps) == 2
    offsets = sorted(c.offset for c in comps)
    assert offsets == [0.0, 1.0]
    lo = min(comps, key=lambda c: c.offset)
    assert lo.signed_offset([0.3], lip_1d.chart) == pytest.approx(0.3)


def test_fold_distance(lip_1d):
    d, comp = lip_1d.fold_distance([0.3])
    assert d == pytest.approx(0.3) and comp.offset == 0.0
    d, comp = lip_1d.fold_distance([0.9])
    assert d == pytest.approx(0.1) and comp.offset == 1.0


def test_round_trip(torus):
    text = dump_scenario(torus)
    again = loads_scenario(text)
    F1 = torus.difference(1, 2)
    F2 = again.difference(1, 2)
    for x in ([0.1, 0.2], [0.7, 0.45]):
        assert F1.value(x) == pytest.approx(F2.value(x), abs=1e-15)
        for a, b in zip(F1.grad(x), F2.grad(x)):
            assert a == pytest.approx(b, abs=1e-15)
    # derived folds are re-derived identically
    assert len(again.folds.components) == len(torus.folds.components)


def test_round_trip_cusp(cusp_well):
    text = dump_scenario(cusp_well)
    again = loads_scenario(text)
    F1 = cusp_well.difference(1, 3)
    F2 = again.difference(1, 3)
    x = [0.3, 0.1]
    assert F1.value(x) == pytest.approx(F2.value(x), abs=1e-15)


def test_torus_gradient_oracle(torus):
    # F = cos(2 pi x1) + cos(2 pi x2): gradient is -2 pi sin(2 pi x_i)
    F = torus.difference(1, 2)
    x = [0.2, 0.7]
    g = F.grad(x)
    assert g[0] == pytest.approx(-2 * math.pi * math.sin(2 * math.pi * 0.2))
    assert g[1] == pytest.approx(-2 * math.pi * math.sin(2 * math.pi * 0.7))
