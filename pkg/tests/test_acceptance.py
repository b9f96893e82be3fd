"""End-to-end acceptance gate.

Each test exercises one headline guarantee at its stated tolerance and
budget and prints a single PASS/FAIL line (run with -s to see them live).
"""

import itertools
import math
import random
import time

import pytest

from flowtrees import broken, load_fixture, morse, tree
from flowtrees.flow import (
    CriticalEnd,
    FoldEnd,
    integrate_descending,
    integrate_maximal,
)


def _report(num: int, label: str, ok: bool):
    print(f"[ACCEPTANCE {num}] {label}: {'PASS' if ok else 'FAIL'}")
    assert ok, f"acceptance {num} failed: {label}"


# 1 -------------------------------------------------------------------------


def test_acceptance_1_tanh_match(double_well):
    t0 = time.perf_counter()
    F = double_well.difference(1, 2)
    fl = integrate_maximal(F, [0.0])
    worst = 0.0
    for k in range(-80, 81):
        t = 0.1 * k
        if fl.times[0] < t < fl.times[-1]:
            worst = max(worst, abs(fl.point(t)[0] - math.tanh(t)))
    elapsed = time.perf_counter() - t0
    _report(
        1,
        f"double-well flow vs tanh(t), sup distance {worst:.2e} "
        f"({elapsed:.2f}s)",
        worst <= 1e-6 and elapsed < 1.0,
    )


# 2 -------------------------------------------------------------------------


def test_acceptance_2_fold_hit_time(cusp_2d):
    t0 = time.perf_counter()
    F = cusp_2d.difference(1, 2)
    worst = 0.0
    for x0 in (0.125, 0.5, 0.845):
        fl = integrate_descending(F, [x0, 0.0])
        assert isinstance(fl.end_event, FoldEnd)
        worst = max(worst, abs(fl.times[-1] - math.sqrt(2 * x0) / 2))
    elapsed = time.perf_counter() - t0
    _report(
        2,
        f"cusp fold hit times vs sqrt(2 x0)/2, worst error {worst:.2e} "
        f"({elapsed:.2f}s)",
        worst <= 1e-4 and elapsed < 1.0,
    )


# 3 -------------------------------------------------------------------------


def test_acceptance_3_breaking_extraction(torus):
    t0 = time.perf_counter()
    F = torus.difference(1, 2)
    seq = [
        broken.from_flow(integrate_maximal(F, [0.25, 2.0 ** -n]))
        for n in range(1, 13)
    ]
    res = broken.extract_limit(seq)
    lim = res.limit
    d_chain = min(
        (torus.chart.distance(c.location, (0.5, 0.0)) for c in lim.chain),
        default=math.inf,
    )
    d_end = torus.chart.distance(lim.family.end, (0.5, 0.5))
    radii = [r["radius"] for r in res.certificate["ladder"]]
    elapsed = time.perf_counter() - t0
    _report(
        3,
        f"broken limit through (1/2,0): chain error {d_chain:.2e}, end "
        f"error {d_end:.2e}, ladder {radii} ({elapsed:.2f}s)",
        lim.q == 1
        and d_chain <= 1e-3
        and d_end <= 1e-3
        and radii == [0.05, 0.025, 0.0125, 0.00625]
        and elapsed < 10.0,
    )


# 4 -------------------------------------------------------------------------


def _segment_pools(torus, fold_morse, cusp_well, lip_1d):
    Ft = torus.difference(1, 2)
    Ff = fold_morse.difference(1, 3)
    Fw = cusp_well.difference(1, 3)
    Fl = lip_1d.difference(1, 3)
    return [
        (
            torus,
            [
                integrate_maximal(Ft, [0.25, 0.0]),  # max -> saddle x
                integrate_maximal(Ft, [0.0, 0.25]),  # max -> saddle y
                integrate_maximal(Ft, [0.5, 0.25]),  # saddle x -> min
                integrate_maximal(Ft, [0.25, 0.5]),  # saddle y -> min
                integrate_maximal(Ft, [0.25, 0.125]),  # max -> min
            ],
        ),
        (fold_morse, [integrate_maximal(Ff, [0.25])]),
        (cusp_well, [integrate_maximal(Fw, [0.03, 0.1])]),
        (lip_1d, [integrate_maximal(Fl, [0.5])]),
    ]


def _oracle_accepts(scenario, kind: str, segs) -> bool:
    """Validity from raw flow events only, written independently of
    assemble(): class pattern, shared joints, strict index descent."""
    q = len(segs) - 1
    classes = [s.flow_class.kind for s in segs]
    if kind == "morse":
        want = ["morse"] * (q + 1)
    elif kind == "fold_terminating":
        want = ["morse"] * q + ["fold_terminating"]
    elif kind == "fold_emanating":
        want = ["fold_emanating"] + ["morse"] * q
    elif kind == "singular":
        if q == 0:
            want = ["singular"]
        else:
            want = (
                ["fold_emanating"] + ["morse"] * (q - 1) + ["fold_terminating"]
            )
    else:
        return False
    if classes != want:
        return False
    chain = []
    for a, b in zip(segs, segs[1:]):
        if not (
            isinstance(a.end_event, CriticalEnd)
            and isinstance(b.start_event, CriticalEnd)
        ):
            return False
        ca, cb = a.end_event.cp, b.start_event.cp
        if scenario.chart.distance(ca.location, cb.location) > 1e-9:
            return False
        chain.append(ca)
    indices = []
    if isinstance(segs[0].start_event, CriticalEnd):
        indices.append(segs[0].start_event.cp.index)
    indices.extend(c.index for c in chain)
    if isinstance(segs[-1].end_event, CriticalEnd):
        indices.append(segs[-1].end_event.cp.index)
    return all(x > y for x, y in zip(indices, indices[1:]))


def test_acceptance_4_index_monotonicity(torus, fold_morse, cusp_well, lip_1d):
    pools = _segment_pools(torus, fold_morse, cusp_well, lip_1d)
    rng = random.Random(20240824)
    kinds = ["morse", "fold_terminating", "fold_emanating", "singular"]
    false_accepts = 0
    disagreements = 0
    accepted = 0
    for _ in range(1000):
        scenario, pool = pools[rng.randrange(len(pools))]
        segs = [rng.choice(pool) for _ in range(rng.randrange(1, 4))]
        kind = rng.choice(kinds)
        try:
            b = broken.assemble(kind, segs)
            ok = True
        except broken.AssemblyError:
            ok = False
        should = _oracle_accepts(scenario, kind, segs)
        if ok:
            accepted += 1
            idx = (
                [b.start_cp.index if b.start_cp else None]
                + [c.index for c in b.chain]
                + [b.end_cp.index if b.end_cp else None]
            )
            idx = [i for i in idx if i is not None]
            if not all(x > y for x, y in zip(idx, idx[1:])):
                false_accepts += 1
        if ok != should:
            disagreements += 1
    _report(
        4,
        f"1000 assemble attempts: {accepted} accepted, "
        f"{false_accepts} false accepts, {disagreements} oracle "
        f"disagreements",
        accepted > 0 and false_accepts == 0 and disagreements == 0,
    )


# 5 -------------------------------------------------------------------------


def test_acceptance_5_classification_table(
    double_well, fold_morse, lip_1d, torus
):
    cases = [
        ("double-well-1d", double_well, (1, 2), [0.0], "morse"),
        ("fold-morse-1d", fold_morse, (1, 3), [0.25], "fold_terminating"),
        ("fold-morse-1d swapped", fold_morse, (3, 1), [0.25], "fold_emanating"),
        ("lip-1d", lip_1d, (1, 3), [0.5], "singular"),
        ("torus-2d", torus, (1, 2), [0.25, 0.125], "morse"),
    ]
    got = [
        integrate_maximal(sc.difference(*pair), x0).flow_class.kind
        for _name, sc, pair, x0 in [c[:4] for c in cases]
    ]
    want = [c[4] for c in cases]
    _report(
        5,
        f"classification table {got}",
        got == want,
    )


# 6 -------------------------------------------------------------------------

SPHERE_PAIRS = {
    "double-well-1d": [(1, 2)],
    "cusp-2d": [(1, 2)],
    "fold-morse-1d": [(1, 3)],
    "lip-1d": [(1, 4), (2, 3)],
    "torus-2d": [(1, 2)],
    "cusp-well-2d": [(1, 3), (2, 3)],
    "cusp-tangent-2d": [(2, 3)],
}


def test_acceptance_6_sphere_lemma():
    t0 = time.perf_counter()
    checked = 0
    for name, pairs in SPHERE_PAIRS.items():
        sc = load_fixture(name)
        dim = sc.chart.dim
        for pair in pairs:
            F = sc.difference(*pair)
            cps = morse.find_critical_points(F)
            nbhds = morse.default_neighborhoods(F, cps)
            for c in cps:
                n = nbhds[c.key()]
                for which, sphere_dim in (
                    ("Stable", dim - c.index - 1),
                    ("Unstable", c.index - 1),
                ):
                    k = 6 if sphere_dim >= 1 else 2
                    pts = morse.sphere_samples(c, n, which, k)
                    if sphere_dim < 0:
                        assert pts == []
                        continue
                    assert len(pts) == k
                    if sphere_dim == 0:
                        assert len({tuple(p) for p in pts}) == 2
                    for p in pts:
                        fl = integrate_maximal(F, p)
                        end = (
                            fl.end_event if which == "Stable" else fl.start_event
                        )
                        tip = (
                            fl.points[-1] if which == "Stable" else fl.points[0]
                        )
                        assert isinstance(end, CriticalEnd)
                        assert sc.chart.distance(tip, c.location) <= 1e-6
                        checked += 1
    elapsed = time.perf_counter() - t0
    _report(
        6,
        f"sphere lemma: {checked} sampled flows reached their centers "
        f"({elapsed:.2f}s)",
        checked > 0 and elapsed < 5.0,
    )


# 7 -------------------------------------------------------------------------


def test_acceptance_7_minimal_representative(double_well, torus):
    t0 = time.perf_counter()
    rng = random.Random(7)
    bases = [
        tree.single_edge_tree(double_well, (1, 2), [0.0]),
        tree.single_edge_tree(torus, (1, 2), [0.25, 0.125]),
    ]
    targets = [tree.minimal_representative(b) for b in bases]
    ops = 0
    ok = True
    while ops < 500:
        pick = rng.randrange(len(bases))
        t = bases[pick]
        for _ in range(rng.randrange(1, 4)):
            eids = [
                k
                for k, e in t.edges.items()
                if not e.ghost and e.flow.start[0] == e.flow.end[0]
            ]
            eid = rng.choice(eids)
            e = t.edges[eid]
            si, f0 = e.flow.start
            _, f1 = e.flow.end
            anchor = (si, f0 + (f1 - f0) * rng.uniform(0.25, 0.75))
            op = rng.choice((tree.split_edge, tree.insert_ghost))
            t = op(t, eid, anchor)
            ops += 1
        m = tree.minimal_representative(t)
        if not tree.trees_equal_exact(m, targets[pick]):
            ok = False
            break
        if not tree.trees_equal_exact(
            tree.minimal_representative(m), m
        ):
            ok = False
            break
    elapsed = time.perf_counter() - t0
    _report(
        7,
        f"minimal representative invariant under {ops} random "
        f"splits/ghost insertions ({elapsed:.2f}s)",
        ok and ops >= 500 and elapsed < 5.0,
    )


# 8 -------------------------------------------------------------------------


def test_acceptance_8_convergence_audit(torus):
    t0 = time.perf_counter()
    probes, diag = tree.builtin_family("torus-offsets", torus, prefix_length=16)
    report = tree.audit_convergence_structure(
        probes, diag, prefix_length=16, ladder_depth=4
    )
    elapsed = time.perf_counter() - t0
    axioms = [
        "constant",
        "subsequence",
        "subsubsequence",
        "diagonal",
        "uniqueness",
    ]
    axes = {k: report[k]["pass"] for k in axioms}
    witness = report["diagonal"]["witness"].get("indices")
    _report(
        8,
        f"five-axiom audit {axes}, diagonal witness {witness} "
        f"({elapsed:.2f}s)",
        report["all_pass"] and bool(witness) and elapsed < 60.0,
    )


# 9 -------------------------------------------------------------------------


def _gamma_cluster(seq):
    """Largest constant-combinatorics subfamily of a tree sequence."""
    groups = {}
    for i, t in enumerate(seq):
        groups.setdefault(tree.combinatorial_type(t), []).append(i)
    best = max(groups.values(), key=len)
    return [seq[i] for i in best]


def _split_seq(seq, where=0.4):
    out = []
    for t in seq:
        e = t.edges[0]
        si, f0 = e.flow.start
        _, f1 = e.flow.end
        out.append(tree.split_edge(t, 0, (si, f0 + (f1 - f0) * where)))
    return out


def _ghost_seq(seq, where=0.3):
    out = []
    for t in seq:
        e = t.edges[0]
        si, f0 = e.flow.start
        _, f1 = e.flow.end
        out.append(tree.insert_ghost(t, 0, (si, f0 + (f1 - f0) * where)))
    return out


def _tree_sequences(torus, double_well, fold_morse):
    rng = random.Random(99)
    seqs = []

    def torus_trees(x0):
        # offsets below the saddle: breaking at (1/2, 0)
        return [
            tree.single_edge_tree(torus, (1, 2), [x0, 2.0 ** -(n + 2)])
            for n in range(12)
        ]

    base_cache = {x0: torus_trees(x0) for x0 in (0.15, 0.2, 0.25, 0.3, 0.35)}

    # plain breaking sequences, y-offsets shrinking toward the saddle axis
    for x0 in base_cache:
        seqs.append(list(base_cache[x0]))
    for x0 in (0.1, 0.4, 0.12, 0.18, 0.32):
        seqs.append(torus_trees(x0))

    # the same breaking phenomenon along the other axis: chain at (0, 1/2)
    for y0 in (0.15, 0.2, 0.25, 0.3, 0.35):
        seqs.append(
            [
                tree.single_edge_tree(torus, (1, 2), [2.0 ** -(n + 2), y0])
                for n in range(12)
            ]
        )

    # approach from the other side of the saddle (wrapped negative offsets)
    for x0 in (0.2, 0.25, 0.3):
        seqs.append(
            [
                tree.single_edge_tree(
                    torus, (1, 2), [x0, 1.0 - 2.0 ** -(n + 2)]
                )
                for n in range(12)
            ]
        )

    # drifting seeds: x0 varies along the sequence but the limit is the same
    for drift in (0.1, -0.08):
        seqs.append(
            [
                tree.single_edge_tree(
                    torus, (1, 2), [0.25 + drift * 2.0 ** -n, 2.0 ** -(n + 2)]
                )
                for n in range(12)
            ]
        )

    # split / ghost variants of breaking sequences (2 or 3 raw edges)
    for x0 in base_cache:
        seqs.append(_split_seq(base_cache[x0]))
        seqs.append(_ghost_seq(base_cache[x0]))
    for x0 in (0.2, 0.3):
        # three raw edges: split the first half of an already-split tree
        out = []
        for t in _split_seq(base_cache[x0], 0.4):
            e = t.edges[0]
            si, f0 = e.flow.start
            _, f1 = e.flow.end
            out.append(tree.split_edge(t, 0, (si, f0 + (f1 - f0) * 0.5)))
        seqs.append(out)

    # constant sequences on every fixture with valid single-edge trees
    dw = tree.single_edge_tree(double_well, (1, 2), [0.0])
    fm = tree.single_edge_tree(fold_morse, (1, 3), [0.25])
    fm_swapped = tree.single_edge_tree(fold_morse, (3, 1), [0.25])
    for base in (dw, fm, fm_swapped):
        for reps in (10, 12):
            seqs.append([base] * reps)
        seqs.append(_split_seq([base] * 10, 0.6))
        seqs.append(_ghost_seq([base] * 10, 0.4))
    for x0 in (0.15, 0.25, 0.35):
        seqs.append([base_cache[x0][0]] * 10)

    # sequences with a leading off-type run removed by gamma clustering
    for x0 in (0.25, 0.3, 0.2):
        seqs.append([base_cache[x0][0]] * 2 + list(base_cache[x0]))

    rng.shuffle(seqs)
    return seqs[:50]


def test_acceptance_9_theorem_sweep(torus, double_well, fold_morse):
    t0 = time.perf_counter()
    seqs = _tree_sequences(torus, double_well, fold_morse)
    assert len(seqs) == 50
    inconclusive = 0
    certified = 0
    for seq in seqs:
        assert all(tree.edge_count(t) <= 3 for t in seq)
        sub = _gamma_cluster(seq)
        try:
            lim, _sel, cert = tree.stratum_limit(sub)
        except broken.InconclusiveError:
            inconclusive += 1
            continue
        assert cert["edges"] or cert["vertices"]
        certified += 1
    elapsed = time.perf_counter() - t0
    _report(
        9,
        f"theorem sweep: {certified}/50 certified stratum limits, "
        f"{inconclusive} inconclusive ({elapsed:.2f}s)",
        certified == 50 and inconclusive == 0 and elapsed < 120.0,
    )


# 10 ------------------------------------------------------------------------

ALL_FIXTURES = [
    "double-well-1d",
    "cusp-2d",
    "fold-morse-1d",
    "lip-1d",
    "torus-2d",
    "cusp-well-2d",
    "cusp-tangent-2d",
]


def _fd_grad(value, x, h=1e-6):
    g = []
    for k in range(len(x)):
        xp = list(x)
        xm = list(x)
        xp[k] += h
        xm[k] -= h
        g.append((value(xp) - value(xm)) / (2 * h))
    return g


def test_acceptance_10_gradient_checks():
    rng = random.Random(1010)
    worst = 0.0
    checked = 0
    for name in ALL_FIXTURES:
        sc = load_fixture(name)
        chart = sc.chart
        for sheet in sc.sheets:
            count = 0
            while count < 200:
                x = [
                    rng.uniform(lo, hi) for lo, hi in chart.bounds
                ]
                if sheet.is_cusp:
                    # stay clear of the fold so central differences remain
                    # one-sided-free and the sqrt stays smooth
                    u = sheet.normal_coord(x)
                    if u < 0.05:
                        continue
                    # keep the FD stencil inside the chart too
                if any(
                    x[k] - 2e-6 < lo or x[k] + 2e-6 > hi
                    for k, (lo, hi) in enumerate(chart.bounds)
                ):
                    continue
                g = sheet.grad(x)
                fd = _fd_grad(lambda p: sheet.value(p, clamp=True), x)
                scale = max(1.0, max(abs(v) for v in g))
                err = max(abs(a - b) for a, b in zip(g, fd)) / scale
                worst = max(worst, err)
                count += 1
                checked += 1
    _report(
        10,
        f"gradient checks: {checked} points, worst relative error "
        f"{worst:.2e}",
        worst <= 1e-6,
    )
