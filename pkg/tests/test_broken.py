import pytest

from flowtrees import broken
from flowtrees.broken import (
    AssemblyError,
    InconclusiveError,
    assemble,
    broken_equal,
    contains,
    extract_limit,
    from_flow,
    make_neighborhood,
    refine,
)
from flowtrees.flow import integrate_maximal


def _torus_segments(torus):
    F = torus.difference(1, 2)
    top = integrate_maximal(F, [0.25, 0.0])  # max (0,0) -> saddle (1/2,0)
    bot = integrate_maximal(F, [0.5, 0.25])  # saddle (1/2,0) -> min (1/2,1/2)
    return F, top, bot


def test_from_flow_morse(double_well):
    F = double_well.difference(1, 2)
    b = from_flow(integrate_maximal(F, [0.0]))
    assert b.family.kind == "morse"
    assert b.q == 0 and b.chain == []
    assert b.family.start == (-1.0,) and b.family.end == (1.0,)


def test_assemble_two_segments(torus):
    F, top, bot = _torus_segments(torus)
    b = assemble("morse", [top, bot])
    assert b.q == 1
    assert [c.location for c in b.chain] == [(0.5, 0.0)]
    assert [c.index for c in b.chain] == [1]
    assert b.family.start == (0.0, 0.0) and b.family.end == (0.5, 0.5)


def test_assemble_rejects_wrong_order(torus):
    F, top, bot = _torus_segments(torus)
    with pytest.raises(AssemblyError):
        assemble("morse", [bot, top])


def test_assemble_rejects_equal_index_joint(torus):
    # two saddle-to-min flows into the same minimum never chain: the joint
    # would need a strict index drop across a shared critical point
    F = torus.difference(1, 2)
    a = integrate_maximal(F, [0.5, 0.25])  # (1/2,0) -> (1/2,1/2)
    b = integrate_maximal(F, [0.25, 0.5])  # (0,1/2) -> (1/2,1/2)
    with pytest.raises(AssemblyError):
        assemble("morse", [a, b])


def test_assemble_fold_families(fold_morse):
    F = fold_morse.difference(1, 3)
    fl = integrate_maximal(F, [0.25])
    b = assemble("fold_terminating", [fl])
    assert b.family.kind == "fold_terminating"
    assert b.fold_end is not None
    with pytest.raises(AssemblyError):
        assemble("morse", [fl])


def test_neighborhood_contains_center(torus):
    F, top, bot = _torus_segments(torus)
    b = assemble("morse", [top, bot])
    W = make_neighborhood(b, 0.05)
    assert contains(W, b)


def test_neighborhood_contains_less_broken(torus):
    # an unbroken flow passing close to the saddle lies in the window system
    F, top, bot = _torus_segments(torus)
    b = assemble("morse", [top, bot])
    W = make_neighborhood(b, 0.05)
    near = from_flow(integrate_maximal(F, [0.25, 2.0 ** -9]))
    far = from_flow(integrate_maximal(F, [0.25, 0.25]))
    assert contains(W, near)
    assert not contains(W, far)


def test_refine(torus):
    F, top, bot = _torus_segments(torus)
    b = assemble("morse", [top, bot])
    W1 = make_neighborhood(b, 0.05)
    W2 = make_neighborhood(b, 0.02)
    W = refine(W1, W2)
    near = from_flow(integrate_maximal(F, [0.25, 2.0 ** -9]))
    assert contains(W, near) == (contains(W1, near) and contains(W2, near))


def test_broken_equal(torus):
    F, top, bot = _torus_segments(torus)
    b1 = assemble("morse", [top, bot])
    b2 = assemble(
        "morse",
        [
            integrate_maximal(F, [0.125, 0.0]),
            integrate_maximal(F, [0.5, 0.125]),
        ],
    )
    assert broken_equal(b1, b2)
    assert not broken_equal(b1, from_flow(integrate_maximal(F, [0.25, 0.25])))


def test_extract_limit_breaking(torus):
    F = torus.difference(1, 2)
    seq = [
        from_flow(integrate_maximal(F, [0.25, 2.0 ** -n]))
        for n in range(1, 13)
    ]
    res = extract_limit(seq)
    lim = res.limit
    assert lim.q == 1
    assert torus.chart.distance(lim.chain[0].location, (0.5, 0.0)) <= 1e-3
    assert torus.chart.distance(lim.family.end, (0.5, 0.5)) <= 1e-3
    radii = [r["radius"] for r in res.certificate["ladder"]]
    assert radii == [0.05, 0.025, 0.0125, 0.00625]
    assert all(r["tail_index"] < len(res.indices) for r in res.certificate["ladder"])


def test_extract_limit_constant_sequence(torus):
    F = torus.difference(1, 2)
    seq = [from_flow(integrate_maximal(F, [0.25, 0.125])) for _ in range(10)]
    res = extract_limit(seq)
    assert res.limit.q == 0
    assert broken_equal(res.limit, seq[0])


def test_extract_limit_too_short(torus):
    F = torus.difference(1, 2)
    seq = [from_flow(integrate_maximal(F, [0.25, 0.125])) for _ in range(5)]
    with pytest.raises(InconclusiveError):
        extract_limit(seq)


def test_extract_limit_fold_family(cusp_well):
    F = cusp_well.difference(1, 3)
    seq = [
        from_flow(integrate_maximal(F, [0.03, 0.1 * 2.0 ** -n]))
        for n in range(12)
    ]
    res = extract_limit(seq)
    assert res.limit.family.kind == "fold_emanating"
    assert res.limit.fold_start is not None
