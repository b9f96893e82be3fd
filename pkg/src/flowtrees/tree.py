"""Broken flow trees: validation, reduction, combinatorial types, limits.

A source tree is a finite tree whose vertices of valence >= 2 carry a
cyclic order on their incident edges. A broken flow tree maps each edge
to a restriction of a broken gradient flow of some sheet-difference
field (or to a constant ghost edge) and each vertex to a base point.

Each edge has two cotangent-lift sides: the upper sheet traversed with
the flow and the lower sheet traversed against it. At a vertex, exactly
one side of each incident edge arrives and one departs; validity demands
that the arriving side of each edge matches the departing side of the
next edge in cyclic order (equal covectors at the vertex image) and that
following these matchings traverses every side exactly once in a single
oriented loop.

Equivalence quotients by removable 2-valent vertices (same field, flows
that splice) and by ghost edges; minimal_representative computes the
canonical reduced form. The combinatorial type records the tree shape
with cyclic orders plus, per edge, the field and the moduli family of
the maximal extension with its fixed endpoints.

stratum_limit runs the certified broken-flow limit edgewise, clusters
vertex images, turns collapsed edges into ghosts and reassembles;
audit_convergence_structure checks the five sequential-convergence
axioms (constant, subsequence, sub-subsequence, diagonal, uniqueness)
with is_sfg_limit as the membership oracle.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field as dc_field

from . import broken as broken_mod
from .broken import (
    BrokenFlow,
    InconclusiveError,
    LADDER_RADII,
    broken_equal,
    contains,
    from_flow,
    make_neighborhood,
)
from .flow import integrate_maximal
from .morse import default_neighborhoods
from .scenario import Scenario

__all__ = [
    "Vertex",
    "Edge",
    "EdgeFlow",
    "BrokenFlowTree",
    "CombinatorialType",
    "TreeError",
    "validate",
    "minimal_representative",
    "combinatorial_type",
    "edge_count",
    "stratum_limit",
    "is_sfg_limit",
    "audit_convergence_structure",
    "fg_open_check",
    "trees_equal_exact",
    "split_edge",
    "insert_ghost",
    "single_edge_tree",
    "loads_tree",
    "load_tree",
    "dump_tree",
    "whole_space",
    "gamma_stratum",
    "ladder_neighborhood",
    "builtin_family",
]


class TreeError(ValueError):
    pass


@dataclass
class EdgeFlow:
    """Restriction of a broken flow between two anchors.

    Anchors are (segment index, F value) pairs on the maximal extension;
    the restriction descends from start to end through the sub-chain of
    segments in between.
    """

    extension: BrokenFlow
    start: tuple  # (segment index, F value)
    end: tuple

    def point_at(self, anchor) -> list[float]:
        si, f = anchor
        seg = self.extension.segments[si]
        return seg.point_at_value(f)

    def tail_point(self) -> list[float]:
        return self.point_at(self.start)

    def head_point(self) -> list[float]:
        return self.point_at(self.end)

    def fingerprint(self) -> tuple:
        ext = self.extension
        first, last = ext.segments[0], ext.segments[-1]
        return (
            ext.family,
            ext.chain_keys(),
            tuple(first.points[0]),
            tuple(last.points[-1]),
            self.start,
            self.end,
        )


@dataclass
class Vertex:
    id: int
    point: tuple


@dataclass
class Edge:
    id: int
    tail: int  # vertex id the flow departs from
    head: int  # vertex id the flow arrives at
    pair: tuple  # (upper sheet id, lower sheet id)
    ghost: bool = False
    flow: EdgeFlow | None = None
    ghost_point: tuple | None = None

    def endpoint(self, which: str):
        return self.tail if which == "tail" else self.head

    def anchor_point(self, vertex_id: int):
        if self.ghost:
            return list(self.ghost_point)
        return self.flow.tail_point() if vertex_id == self.tail else self.flow.head_point()


@dataclass
class BrokenFlowTree:
    scenario: Scenario
    vertices: dict  # id -> Vertex
    edges: dict  # id -> Edge
    cyclic: dict  # vertex id -> list of incident edge ids, in cyclic order
    annotations: dict = dc_field(default_factory=dict)

    def field_of(self, e: Edge):
        return self.scenario.difference(*e.pair)

    @property
    def chart(self):
        return self.scenario.chart

    def incident(self, vid: int) -> list[int]:
        return list(self.cyclic.get(vid, []))

    def copy(self) -> "BrokenFlowTree":
        return BrokenFlowTree(
            scenario=self.scenario,
            vertices={k: Vertex(v.id, tuple(v.point)) for k, v in self.vertices.items()},
            edges={
                k: Edge(e.id, e.tail, e.head, e.pair, e.ghost, e.flow, e.ghost_point)
                for k, e in self.edges.items()
            },
            cyclic={k: list(v) for k, v in self.cyclic.items()},
            annotations=dict(self.annotations),
        )


def _check_source(t: BrokenFlowTree):
    """Connectivity, acyclicity and cyclic-order totality."""
    if not t.vertices:
        raise TreeError("empty tree")
    for vid in t.vertices:
        inc = t.cyclic.get(vid, [])
        degree = sum(
            (e.tail == vid) + (e.head == vid) for e in t.edges.values()
        )
        if sorted(inc) != sorted(
            eid for eid, e in t.edges.items() if vid in (e.tail, e.head)
        ):
            raise TreeError(f"cyclic order at vertex {vid} is not total")
        if degree != len(inc):
            raise TreeError(f"vertex {vid} degree mismatch")
    if len(t.edges) != len(t.vertices) - 1:
        raise TreeError("edge count does not match a tree")
    seen = set()
    stack = [next(iter(t.vertices))]
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        for eid in t.cyclic.get(v, []):
            e = t.edges[eid]
            stack.append(e.head if e.tail == v else e.tail)
    if seen != set(t.vertices):
        raise TreeError("tree is not connected")


# lift sides -----------------------------------------------------------------


def _side_cov(t: BrokenFlowTree, e: Edge, vid: int, role: str) -> list[float]:
    """Covector of the arriving or departing lift side of edge e at vertex
    vid. The upper-sheet side runs with the flow, the lower-sheet side
    against it."""
    at_head = vid == e.head
    if role == "arrive":
        sheet_id = e.pair[0] if at_head else e.pair[1]
    else:
        sheet_id = e.pair[1] if at_head else e.pair[0]
    sheet = t.scenario.sheet(sheet_id)
    p = t.chart.wrap(e.anchor_point(vid))
    return sheet.grad(p, clamp=True)


def _boundary_walk(t: BrokenFlowTree):
    """Follow arriving-side -> departing-side matchings around the tree.

    Returns (closed, n_loops, visited) over the 2E directed sides; a valid
    tree yields one closed loop covering every side.
    """
    sides = set()
    for eid, e in t.edges.items():
        sides.add((eid, "A"))  # upper sheet, tail -> head
        sides.add((eid, "B"))  # lower sheet, head -> tail
    if not sides:
        return True, 0, set()

    def successor(side):
        eid, lab = side
        e = t.edges[eid]
        v = e.head if lab == "A" else e.tail  # vertex the side arrives at
        order = t.cyclic[v]
        j = order.index(eid)
        nxt = t.edges[order[(j + 1) % len(order)]]
        # departing side of the next edge at v
        return (nxt.id, "A" if v == nxt.tail else "B")

    visited = set()
    loops = 0
    remaining = set(sides)
    while remaining:
        start = min(remaining)
        cur = start
        loops += 1
        for _ in range(2 * len(t.edges) + 1):
            visited.add(cur)
            remaining.discard(cur)
            cur = successor(cur)
            if cur == start:
                break
        else:
            return False, loops, visited
    return loops == 1, loops, visited


@dataclass
class Diagnostics:
    valid: bool
    loop_closed: bool
    vertex_residuals: dict  # vertex id -> max covector residual
    base_residuals: dict  # vertex id -> max anchor/base-point distance
    orientation_flags: dict  # vertex id -> bool (suspected orientation error)


def validate(t: BrokenFlowTree, tol: float = 1e-6) -> Diagnostics:
    """Vertex-matching and loop-closure diagnostics; valid iff every
    residual is below tol and the lift walk closes into one loop."""
    _check_source(t)
    chart = t.chart
    vertex_residuals = {}
    base_residuals = {}
    orientation_flags = {}
    for vid, v in t.vertices.items():
        order = t.cyclic[vid]
        worst = 0.0
        worst_base = 0.0
        flag = False
        for j, eid in enumerate(order):
            e = t.edges[eid]
            nxt = t.edges[order[(j + 1) % len(order)]]
            cov_a = _side_cov(t, e, vid, "arrive")
            cov_d = _side_cov(t, nxt, vid, "depart")
            res = math.sqrt(sum((a - b) ** 2 for a, b in zip(cov_a, cov_d)))
            worst = max(worst, res)
            if res > tol:
                # would the match succeed with the next edge reversed?
                cov_alt = _side_cov(t, nxt, vid, "arrive")
                if math.sqrt(
                    sum((a - b) ** 2 for a, b in zip(cov_a, cov_alt))
                ) <= tol:
                    flag = True
            worst_base = max(
                worst_base, chart.distance(chart.wrap(e.anchor_point(vid)), v.point)
            )
        vertex_residuals[vid] = worst
        base_residuals[vid] = worst_base
        orientation_flags[vid] = flag
    closed, _, _ = _boundary_walk(t)
    valid = (
        closed
        and all(r <= tol for r in vertex_residuals.values())
        and all(r <= tol for r in base_residuals.values())
    )
    return Diagnostics(
        valid=valid,
        loop_closed=closed,
        vertex_residuals=vertex_residuals,
        base_residuals=base_residuals,
        orientation_flags=orientation_flags,
    )


# reduction ------------------------------------------------------------------


def _remove_ghost(t: BrokenFlowTree, eid: int):
    e = t.edges[eid]
    v_keep, v_drop = sorted((e.tail, e.head))
    del t.edges[eid]
    order_keep = t.cyclic[v_keep]
    order_drop = t.cyclic.pop(v_drop)
    jk = order_keep.index(eid)
    jd = order_drop.index(eid)
    spliced = (
        order_keep[:jk]
        + order_drop[jd + 1 :]
        + order_drop[:jd]
        + order_keep[jk + 1 :]
    )
    t.cyclic[v_keep] = spliced
    del t.vertices[v_drop]
    for oe in t.edges.values():
        if oe.tail == v_drop:
            oe.tail = v_keep
        if oe.head == v_drop:
            oe.head = v_keep


def _try_splice(t: BrokenFlowTree, vid: int) -> bool:
    """Remove vid if it is a removable 2-valent vertex; True on success."""
    order = t.cyclic.get(vid, [])
    if len(order) != 2:
        return False
    e1, e2 = t.edges[order[0]], t.edges[order[1]]
    if e1.ghost or e2.ghost:
        return False
    # orient so e_in arrives at vid and e_out departs from it
    if e1.head == vid and e2.tail == vid:
        e_in, e_out = e1, e2
    elif e2.head == vid and e1.tail == vid:
        e_in, e_out = e2, e1
    else:
        return False
    if e_in.pair != e_out.pair:
        return False
    chart = t.chart
    if chart.distance(e_in.flow.head_point(), e_out.flow.tail_point()) > 1e-6:
        return False
    same_ext = e_in.flow.extension is e_out.flow.extension or broken_equal(
        e_in.flow.extension, e_out.flow.extension, tol=1e-7
    )
    if not same_ext:
        return False
    merged = Edge(
        id=min(e_in.id, e_out.id),
        tail=e_in.tail,
        head=e_out.head,
        pair=e_in.pair,
        flow=EdgeFlow(e_in.flow.extension, e_in.flow.start, e_out.flow.end),
    )
    for eid in (e_in.id, e_out.id):
        del t.edges[eid]
    t.edges[merged.id] = merged
    del t.vertices[vid]
    del t.cyclic[vid]
    for v, order in t.cyclic.items():
        t.cyclic[v] = [
            merged.id if eid in (e_in.id, e_out.id) else eid for eid in order
        ]
    return True


def _reduce(t: BrokenFlowTree) -> BrokenFlowTree:
    t = t.copy()
    changed = True
    while changed:
        changed = False
        ghost_ids = [eid for eid, e in t.edges.items() if e.ghost]
        if ghost_ids and len(t.edges) > 1:
            _remove_ghost(t, min(ghost_ids))
            changed = True
            continue
        for vid in sorted(t.cyclic):
            if _try_splice(t, vid):
                changed = True
                break
    return t


def _edge_token(t: BrokenFlowTree, e: Edge, forward: bool, geometric: bool):
    """Traversal token of an edge; geometric tokens pin the embedding,
    combinatorial tokens only the field and moduli family."""
    fam = None
    if not e.ghost:
        ext = e.flow.extension
        f = ext.family
        fam = (f.kind, f.start, f.end, ext.chain_keys())
    tok = ("ghost" if e.ghost else "real", "fwd" if forward else "rev", e.pair, fam)
    if geometric:
        far = e.head if forward else e.tail
        p = t.vertices[far].point
        tok = tok + (tuple(round(float(x), 9) for x in p),)
    return tok


def _dfs_code(t: BrokenFlowTree, root: int, rot: int, geometric: bool):
    """Planar DFS code from a root and a rotation of its cyclic order.

    Returns (code, vertex visit order, edge visit order).
    """
    code = []
    vorder = [root]
    eorder = []

    def visit(vid: int, in_edge: int | None):
        order = t.cyclic.get(vid, [])
        if not order:
            return
        if in_edge is None:
            seq = order[rot:] + order[:rot]
        else:
            j = order.index(in_edge)
            seq = order[j + 1 :] + order[: j + 1]
            seq = seq[:-1]  # all but the entering edge
        for eid in seq:
            e = t.edges[eid]
            forward = e.tail == vid
            far = e.head if forward else e.tail
            code.append(_edge_token(t, e, forward, geometric))
            vorder.append(far)
            eorder.append(eid)
            visit(far, eid)
            code.append(("up",))

    visit(root, None)
    return tuple(code), vorder, eorder


def _canonical_choice(t: BrokenFlowTree, geometric: bool):
    best = None
    for root in sorted(t.vertices):
        rots = range(max(len(t.cyclic.get(root, [])), 1))
        for rot in rots:
            code, vorder, eorder = _dfs_code(t, root, rot, geometric)
            key = (code, root, rot)
            if best is None or key < best[0]:
                best = (key, vorder, eorder)
    return best


def minimal_representative(t: BrokenFlowTree) -> BrokenFlowTree:
    """Splice removable 2-valent vertices, delete ghost edges, and
    renumber canonically. Idempotent; equivalent inputs give structurally
    identical outputs."""
    r = _reduce(t)
    best = _canonical_choice(r, geometric=True)
    _, vorder, eorder = best
    vmap = {}
    for vid in vorder:
        if vid not in vmap:
            vmap[vid] = len(vmap)
    emap = {eid: k for k, eid in enumerate(eorder)}
    vertices = {vmap[v.id]: Vertex(vmap[v.id], v.point) for v in r.vertices.values()}
    edges = {}
    for e in r.edges.values():
        edges[emap[e.id]] = Edge(
            id=emap[e.id],
            tail=vmap[e.tail],
            head=vmap[e.head],
            pair=e.pair,
            ghost=e.ghost,
            flow=e.flow,
            ghost_point=e.ghost_point,
        )
    cyclic = {}
    for vid, order in r.cyclic.items():
        new = [emap[eid] for eid in order]
        if new:
            j = new.index(min(new))
            new = new[j:] + new[:j]
        cyclic[vmap[vid]] = new
    return BrokenFlowTree(
        scenario=r.scenario,
        vertices=vertices,
        edges=edges,
        cyclic=cyclic,
        annotations=dict(t.annotations),
    )


def trees_equal_exact(a: BrokenFlowTree, b: BrokenFlowTree) -> bool:
    """Structural equality of canonical forms (exact floats)."""
    if set(a.vertices) != set(b.vertices) or set(a.edges) != set(b.edges):
        return False
    for k in a.vertices:
        if tuple(a.vertices[k].point) != tuple(b.vertices[k].point):
            return False
    for k in a.edges:
        ea, eb = a.edges[k], b.edges[k]
        if (ea.tail, ea.head, ea.pair, ea.ghost) != (eb.tail, eb.head, eb.pair, eb.ghost):
            return False
        if ea.ghost:
            if tuple(ea.ghost_point) != tuple(eb.ghost_point):
                return False
        elif ea.flow.fingerprint() != eb.flow.fingerprint():
            return False
    return a.cyclic == b.cyclic


@dataclass(frozen=True)
class CombinatorialType:
    code: tuple

    def __eq__(self, other):
        return isinstance(other, CombinatorialType) and self.code == other.code

    def __hash__(self):
        return hash(self.code)


def combinatorial_type(t: BrokenFlowTree) -> CombinatorialType:
    """Canonical combinatorial code of the minimal representative: tree
    shape with cyclic orders, per-edge field pair and moduli family with
    its fixed endpoints. Blind to the embedding and parameterization."""
    r = _reduce(t)
    best = _canonical_choice(r, geometric=False)
    return CombinatorialType(code=best[0][0])


def edge_count(t: BrokenFlowTree) -> int:
    return len(_reduce(t).edges)


# construction helpers -------------------------------------------------------


def _locate_anchor(ext: BrokenFlow, point, prefer_late: bool = False) -> tuple:
    """(segment index, F value) of a base point on a broken flow."""
    chart = ext.field.chart
    order = range(len(ext.segments) - 1, -1, -1) if prefer_late else range(
        len(ext.segments)
    )
    f = ext.field.value(chart.wrap(point), clamp=True)
    best = None
    for si in order:
        seg = ext.segments[si]
        fc = min(max(f, seg.f_end), seg.f_start)
        d = chart.distance(seg.point_at_value(fc), chart.wrap(point))
        if best is None or d < best[0]:
            best = (d, si, fc)
        if d <= 1e-7:
            return (si, fc)
    if best[0] <= 1e-4:
        return (best[1], best[2])
    raise TreeError(f"point {point} does not lie on the flow (off by {best[0]:.2e})")


def single_edge_tree(
    scenario: Scenario, pair: tuple, seed, tail_point=None, head_point=None
) -> BrokenFlowTree:
    """1-edge tree whose edge carries the maximal flow through `seed`,
    restricted between the two vertex points (defaults: the full flow)."""
    F = scenario.difference(*pair)
    ext = from_flow(integrate_maximal(F, seed))
    if tail_point is None:
        tail_point = ext.segments[0].points[0]
    if head_point is None:
        head_point = ext.segments[-1].points[-1]
    ef = EdgeFlow(
        ext,
        _locate_anchor(ext, tail_point),
        _locate_anchor(ext, head_point, prefer_late=True),
    )
    chart = scenario.chart
    v0 = Vertex(0, tuple(chart.wrap(ef.tail_point())))
    v1 = Vertex(1, tuple(chart.wrap(ef.head_point())))
    e = Edge(id=0, tail=0, head=1, pair=tuple(pair), flow=ef)
    return BrokenFlowTree(
        scenario=scenario,
        vertices={0: v0, 1: v1},
        edges={0: e},
        cyclic={0: [0], 1: [0]},
    )


def split_edge(t: BrokenFlowTree, eid: int, anchor: tuple) -> BrokenFlowTree:
    """Insert a 2-valent vertex on a real edge at the given anchor."""
    t = t.copy()
    e = t.edges[eid]
    if e.ghost:
        raise TreeError("cannot split a ghost edge")
    vnew = max(t.vertices) + 1
    enew = max(t.edges) + 1
    mid = t.chart.wrap(e.flow.point_at(anchor))
    t.vertices[vnew] = Vertex(vnew, tuple(mid))
    first = Edge(
        id=eid, tail=e.tail, head=vnew, pair=e.pair,
        flow=EdgeFlow(e.flow.extension, e.flow.start, anchor),
    )
    second = Edge(
        id=enew, tail=vnew, head=e.head, pair=e.pair,
        flow=EdgeFlow(e.flow.extension, anchor, e.flow.end),
    )
    t.edges[eid] = first
    t.edges[enew] = second
    t.cyclic[vnew] = [eid, enew]
    order = t.cyclic[e.head]
    t.cyclic[e.head] = [enew if x == eid else x for x in order]
    return t


def insert_ghost(t: BrokenFlowTree, eid: int, anchor: tuple) -> BrokenFlowTree:
    """Split an edge and stretch the split vertex into a ghost edge."""
    t = split_edge(t, eid, anchor)
    e1 = t.edges[eid]
    vmid = e1.head
    enew2 = max(t.edges) + 1
    vnew2 = max(t.vertices) + 1
    e2_id = [x for x in t.cyclic[vmid] if x != eid][0]
    p = t.vertices[vmid].point
    t.vertices[vnew2] = Vertex(vnew2, p)
    ghost = Edge(
        id=enew2, tail=vmid, head=vnew2, pair=e1.pair, ghost=True, ghost_point=p
    )
    t.edges[enew2] = ghost
    e2 = t.edges[e2_id]
    if e2.tail == vmid:
        e2.tail = vnew2
    else:
        e2.head = vnew2
    t.cyclic[vmid] = [eid, enew2]
    t.cyclic[vnew2] = [enew2, e2_id]
    return t


# stratum limits -------------------------------------------------------------


def _aligned(seq: list[BrokenFlowTree]):
    g0 = combinatorial_type(seq[0])
    for t in seq[1:]:
        if combinatorial_type(t) != g0:
            raise TreeError("sequence members do not share a combinatorial type")
        if set(t.edges) != set(seq[0].edges) or set(t.vertices) != set(
            seq[0].vertices
        ):
            raise TreeError("sequence members are not structurally aligned")
    return g0


def stratum_limit(
    seq: list[BrokenFlowTree],
    cluster_radius: float = broken_mod.CLUSTER_RADIUS,
    min_run: int = broken_mod.MIN_RUN,
    ladder_radii: tuple = LADDER_RADII,
):
    """Certified stratum limit of constant-type tree sequences.

    Runs the broken-flow limit on each edge's maximal extensions, clusters
    the vertex images, restricts the limit flows between the limit vertex
    points (collapsed edges become ghosts) and reassembles. Returns
    (limit tree, joint subsequence indices, certificate).
    """
    if len(seq) < min_run:
        raise InconclusiveError(
            f"sequence length {len(seq)} below the minimum run {min_run}"
        )
    _aligned(seq)
    proto = seq[-1]
    chart = proto.chart
    sel = list(range(len(seq)))
    edge_limits = {}
    for eid in sorted(proto.edges):
        e = proto.edges[eid]
        if e.ghost:
            edge_limits[eid] = None
            continue
        exts = [seq[i].edges[eid].flow.extension for i in sel]
        res = broken_mod.extract_limit(
            exts,
            cluster_radius=cluster_radius,
            min_run=max(3, min(min_run, len(sel))),
            ladder_radii=ladder_radii,
        )
        edge_limits[eid] = res.limit
        sel = [sel[i] for i in res.indices]

    vertex_limits = {}
    for vid in sorted(proto.vertices):
        pts = [list(seq[i].vertices[vid].point) for i in sel]
        keep = broken_mod._cluster(pts, chart, cluster_radius)
        sel = [sel[j] for j in keep]
        p = broken_mod._extrapolate([pts[j] for j in keep], chart, cluster_radius)
        # snap onto an incident limit flow
        for eid in proto.cyclic[vid]:
            lim = edge_limits[eid]
            if lim is None:
                continue
            try:
                si, f = _locate_anchor(lim, p)
            except TreeError:
                continue
            snapped = lim.segments[si].point_at_value(f)
            if chart.distance(snapped, p) <= cluster_radius:
                p = chart.wrap(snapped)
                break
        vertex_limits[vid] = tuple(p)

    out = proto.copy()
    ghosts_introduced = []
    for vid, p in vertex_limits.items():
        out.vertices[vid] = Vertex(vid, p)
    for eid in sorted(proto.edges):
        e = out.edges[eid]
        if e.ghost:
            e.ghost_point = vertex_limits[e.tail]
            continue
        pt, ph = vertex_limits[e.tail], vertex_limits[e.head]
        if chart.distance(pt, ph) <= cluster_radius:
            out.edges[eid] = Edge(
                id=eid, tail=e.tail, head=e.head, pair=e.pair, ghost=True,
                ghost_point=pt,
            )
            ghosts_introduced.append(eid)
            continue
        lim = edge_limits[eid]
        out.edges[eid] = Edge(
            id=eid, tail=e.tail, head=e.head, pair=e.pair,
            flow=EdgeFlow(
                lim,
                _locate_anchor(lim, pt),
                _locate_anchor(lim, ph, prefer_late=True),
            ),
        )
    out.annotations["ghost_history"] = ghosts_introduced

    diag = validate(out)
    if not diag.valid:
        raise InconclusiveError(
            "limit tree fails validation",
            {"residuals": diag.vertex_residuals, "loop": diag.loop_closed},
        )

    # joint certificate on the final subsequence
    cert = {"edges": {}, "vertices": {}, "indices": list(sel)}
    for eid in sorted(proto.edges):
        lim = edge_limits[eid]
        if lim is None:
            continue
        nbhds = default_neighborhoods(lim.field)
        exts = [seq[i].edges[eid].flow.extension for i in range(len(seq))]
        cert["edges"][eid] = broken_mod._certify(lim, exts, sel, ladder_radii, nbhds)
    for vid, p in vertex_limits.items():
        dists = [chart.distance(seq[i].vertices[vid].point, p) for i in sel]
        ladder = []
        for r in ladder_radii:
            if dists[-1] > r:
                raise InconclusiveError(
                    "vertex images do not converge at the ladder resolution",
                    {"vertex": vid, "radius": r, "distance": dists[-1]},
                )
            j = len(dists) - 1
            while j > 0 and dists[j - 1] <= r:
                j -= 1
            ladder.append({"radius": r, "tail_index": sel[j]})
        cert["vertices"][vid] = {"ladder": ladder}
    return out, sel, cert


def is_sfg_limit(
    seq: list[BrokenFlowTree],
    candidate: BrokenFlowTree,
    ladder_radii: tuple = LADDER_RADII,
) -> bool:
    """Membership oracle for stratum Floer-Gromov convergence.

    True iff the per-edge maximal extensions admit a containment ladder
    around the candidate's edge flows and all vertex images converge to
    the candidate's vertex points at the same resolutions.
    """
    try:
        _aligned(seq)
    except TreeError:
        return False
    proto = seq[-1]
    if set(candidate.edges) != set(proto.edges) or set(candidate.vertices) != set(
        proto.vertices
    ):
        return False
    chart = proto.chart
    n = len(seq)
    for eid in sorted(proto.edges):
        pe = proto.edges[eid]
        ce = candidate.edges[eid]
        if pe.ghost:
            continue
        if ce.pair != pe.pair:
            return False
        if ce.ghost:
            # collapsed edge: sequence flows must shrink onto the point
            continue
        lim = ce.flow.extension
        exts = [seq[i].edges[eid].flow.extension for i in range(n)]
        try:
            nbhds = default_neighborhoods(lim.field)
            broken_mod._certify(lim, exts, list(range(n)), ladder_radii, nbhds)
        except InconclusiveError:
            return False
    for vid in sorted(proto.vertices):
        target = candidate.vertices[vid].point
        dists = [chart.distance(seq[i].vertices[vid].point, target) for i in range(n)]
        for r in ladder_radii:
            if dists[-1] > r:
                return False
    return True


# convergence-structure audit -------------------------------------------------


@dataclass
class Probe:
    name: str
    prefix: list  # list[BrokenFlowTree]
    generator: object = None  # callable n -> BrokenFlowTree, or None
    candidate: BrokenFlowTree | None = None

    def element(self, n: int):
        if n < len(self.prefix):
            return self.prefix[n]
        if self.generator is None:
            raise InconclusiveError(f"probe {self.name}: generator exhausted at {n}")
        return self.generator(n)


@dataclass
class DiagonalFamily:
    """Doubly indexed family T[k][n] with row limits x_k -> overall x."""

    generator: object  # callable (k, n) -> BrokenFlowTree
    row_limit: object  # callable k -> BrokenFlowTree
    overall: BrokenFlowTree
    depth: int = 4


def _certified_limit(probe: Probe, min_run: int):
    if probe.candidate is not None:
        return probe.candidate
    lim, _sel, _cert = stratum_limit(probe.prefix, min_run=min_run)
    return lim


def _tree_within(t: BrokenFlowTree, center: BrokenFlowTree, radius: float) -> bool:
    """Is t inside the radius-neighborhood of center (per-edge containment
    plus vertex distances)?"""
    if set(t.edges) != set(center.edges) or set(t.vertices) != set(center.vertices):
        return False
    chart = center.chart
    for vid in center.vertices:
        if chart.distance(t.vertices[vid].point, center.vertices[vid].point) > radius:
            return False
    for eid, ce in center.edges.items():
        te = t.edges[eid]
        if ce.ghost or te.ghost:
            continue
        if te.pair != ce.pair:
            return False
        W = make_neighborhood(ce.flow.extension, radius)
        if not contains(W, te.flow.extension):
            return False
    return True


def audit_convergence_structure(
    probes: list,
    diagonal: DiagonalFamily | None = None,
    prefix_length: int = 16,
    ladder_depth: int = 4,
    seed: int = 0,
) -> dict:
    """Five-axiom audit of the sequential convergence structure, with
    is_sfg_limit as the membership oracle. Returns a report mapping each
    axiom to a pass flag plus witnesses."""
    rng = random.Random(seed)
    radii = LADDER_RADII[:ladder_depth]
    report = {}

    def run_axiom(name, fn):
        try:
            ok, witness = fn()
            report[name] = {"pass": ok, "witness": witness}
        except InconclusiveError as e:
            report[name] = {"pass": False, "witness": f"inconclusive: {e}"}

    def ax_constant():
        for p in probes:
            x = _certified_limit(p, min_run=min(8, prefix_length))
            const = [x] * prefix_length
            if not is_sfg_limit(const, x, radii):
                return False, p.name
        return True, f"{len(probes)} constant sequences"

    def ax_subsequence():
        for p in probes:
            x = _certified_limit(p, min_run=min(8, prefix_length))
            pool = list(range(2 * prefix_length))
            idx = sorted(rng.sample(pool, prefix_length))
            sub = [p.element(i) for i in idx]
            if not is_sfg_limit(sub, x, radii):
                return False, (p.name, idx)
        return True, "random reindexings certified"

    def ax_subsub():
        for p in probes:
            x = _certified_limit(p, min_run=min(8, prefix_length))
            idx = sorted(rng.sample(range(2 * prefix_length), prefix_length))
            sub = [p.element(i) for i in idx]
            _lim, sel, _cert = stratum_limit(sub, min_run=min(8, prefix_length))
            witness = [sub[i] for i in sel]
            if not is_sfg_limit(witness, x, radii):
                return False, (p.name, sel)
        return True, "witness sub-subsequences certified"

    def ax_diagonal():
        if diagonal is None:
            return True, "no diagonal family supplied (vacuous)"
        x = diagonal.overall
        picked = []
        k = 0
        for r, radius in enumerate(radii):
            # K = max of the thresholds for the row limit and both vertex
            # families: advance k until the row limit sits in the radius
            # neighborhood of x, then advance n likewise within the row
            found = False
            while k < prefix_length + diagonal.depth * 4:
                k += 1
                xk = diagonal.row_limit(k)
                if _tree_within(xk, x, radius):
                    found = True
                    break
            if not found:
                return False, f"no row within radius {radius}"
            n = 0
            while n < prefix_length + diagonal.depth * 4:
                n += 1
                tkn = diagonal.generator(k, n)
                if _tree_within(tkn, xk, radius) and _tree_within(tkn, x, radius):
                    picked.append((k, n))
                    break
            else:
                return False, f"no element within radius {radius} in row {k}"
        diag_seq = [diagonal.generator(k, n) for k, n in picked]
        ok = is_sfg_limit(diag_seq, x, radii[-1:])
        return ok, {"indices": picked}

    def ax_uniqueness():
        candidates = []
        for p in probes:
            candidates.append(_certified_limit(p, min_run=min(8, prefix_length)))
        for p in probes:
            seqp = [p.element(i) for i in range(prefix_length)]
            certified = [
                c for c in candidates if is_sfg_limit(seqp, c, radii)
            ]
            reps = []
            for c in certified:
                m = minimal_representative(c)
                if not any(trees_equal_exact(m, r) for r in reps):
                    reps.append(m)
            if len(reps) > 1:
                return False, (p.name, len(reps))
        return True, "no sequence certified two limits"

    run_axiom("constant", ax_constant)
    run_axiom("subsequence", ax_subsequence)
    run_axiom("subsubsequence", ax_subsub)
    run_axiom("diagonal", ax_diagonal)
    run_axiom("uniqueness", ax_uniqueness)
    report["all_pass"] = all(
        report[a]["pass"]
        for a in ("constant", "subsequence", "subsubsequence", "diagonal", "uniqueness")
    )
    return report


# induced open sets -----------------------------------------------------------


class _OpenSet:
    def member(self, t: BrokenFlowTree) -> bool:  # pragma: no cover - interface
        raise NotImplementedError


class _Whole(_OpenSet):
    def member(self, t):
        return True


class _GammaStratum(_OpenSet):
    def __init__(self, gamma: CombinatorialType):
        self.gamma = gamma

    def member(self, t):
        return combinatorial_type(t) == self.gamma


class _Ladder(_OpenSet):
    def __init__(self, center: BrokenFlowTree, radius: float):
        self.center = center
        self.radius = radius

    def member(self, t):
        return _tree_within(t, self.center, self.radius) or trees_equal_exact(
            minimal_representative(t), minimal_representative(self.center)
        )


def whole_space() -> _OpenSet:
    return _Whole()


def gamma_stratum(gamma: CombinatorialType) -> _OpenSet:
    return _GammaStratum(gamma)


def ladder_neighborhood(center: BrokenFlowTree, radius: float) -> _OpenSet:
    return _Ladder(center, radius)


def fg_open_check(U: _OpenSet, probes: list, prefix_length: int = 16) -> dict:
    """For every probe whose certified limit lies in U, verify a tail of
    the sequence lies in U within the probe's own stratum; report the
    first violation otherwise."""
    results = []
    ok = True
    for p in probes:
        lim = _certified_limit(p, min_run=min(8, prefix_length))
        if not U.member(lim):
            results.append({"probe": p.name, "applicable": False, "pass": True})
            continue
        seqp = [p.element(i) for i in range(prefix_length)]
        gamma = combinatorial_type(seqp[-1])
        tail = None
        for K in range(prefix_length):
            if all(
                U.member(x) and combinatorial_type(x) == gamma for x in seqp[K:]
            ):
                tail = K
                break
        passed = tail is not None
        ok = ok and passed
        results.append(
            {"probe": p.name, "applicable": True, "tail_index": tail, "pass": passed}
        )
    return {"pass": ok, "probes": results}


# documents -------------------------------------------------------------------


def dump_tree(t: BrokenFlowTree, scenario_ref: str) -> str:
    doc = {
        "scenario": scenario_ref,
        "vertices": [
            {
                "id": v.id,
                "point": list(v.point),
                "cyclic": list(t.cyclic.get(v.id, [])),
            }
            for v in sorted(t.vertices.values(), key=lambda v: v.id)
        ],
        "edges": [],
    }
    for e in sorted(t.edges.values(), key=lambda e: e.id):
        rec = {
            "id": e.id,
            "tail": e.tail,
            "head": e.head,
            "pair": list(e.pair),
            "ghost": e.ghost,
        }
        if e.ghost:
            rec["point"] = list(e.ghost_point)
        else:
            seg0 = e.flow.extension.segments[0]
            rec["seed"] = list(
                t.chart.wrap(seg0.point_at_value(0.5 * (seg0.f_start + seg0.f_end)))
            )
            rec["start"] = list(t.chart.wrap(e.flow.tail_point()))
            rec["end"] = list(t.chart.wrap(e.flow.head_point()))
        doc["edges"].append(rec)
    return json.dumps(doc, indent=2)


def loads_tree(text: str, scenario: Scenario) -> BrokenFlowTree:
    doc = json.loads(text)
    vertices = {}
    cyclic = {}
    for rec in doc["vertices"]:
        vertices[rec["id"]] = Vertex(rec["id"], tuple(rec["point"]))
        cyclic[rec["id"]] = list(rec["cyclic"])
    edges = {}
    for rec in doc["edges"]:
        pair = tuple(rec["pair"])
        if rec.get("ghost"):
            edges[rec["id"]] = Edge(
                id=rec["id"], tail=rec["tail"], head=rec["head"], pair=pair,
                ghost=True, ghost_point=tuple(rec["point"]),
            )
            continue
        F = scenario.difference(*pair)
        ext = from_flow(integrate_maximal(F, rec["seed"]))
        ef = EdgeFlow(
            ext,
            _locate_anchor(ext, rec["start"]),
            _locate_anchor(ext, rec["end"], prefer_late=True),
        )
        edges[rec["id"]] = Edge(
            id=rec["id"], tail=rec["tail"], head=rec["head"], pair=pair, flow=ef
        )
    return BrokenFlowTree(
        scenario=scenario, vertices=vertices, edges=edges, cyclic=cyclic
    )


def load_tree(path, scenario: Scenario) -> BrokenFlowTree:
    with open(path, encoding="utf-8") as fh:
        return loads_tree(fh.read(), scenario)


# shipped audit families ------------------------------------------------------


def builtin_family(name: str, scenario: Scenario, prefix_length: int = 16):
    """Named doubly-indexed tree families for reproducible audits.

    'torus-offsets' is the two-parameter family of 1-edge trees on the
    periodic torus scenario with start offsets 2^-k + 2^-(n+k); rows
    converge to the offset-2^-k tree and the rows' limits to the broken
    tree through the saddle.
    """
    if name != "torus-offsets":
        raise TreeError(f"unknown builtin family {name!r}")

    def tree_at(offset: float) -> BrokenFlowTree:
        return single_edge_tree(scenario, (1, 2), [0.25, offset])

    def gen2(k: int, n: int) -> BrokenFlowTree:
        return tree_at(2.0 ** -k + 2.0 ** -(n + k))

    def row_limit(k: int) -> BrokenFlowTree:
        return tree_at(2.0 ** -k)

    # offsets start at 1/4: the offset-1/2 tree departs a different
    # critical point and has a different combinatorial type
    row = [tree_at(2.0 ** -(n + 2)) for n in range(prefix_length)]
    lim, _sel, _cert = stratum_limit(row)
    probes = [
        Probe(
            name="torus-row",
            prefix=row,
            generator=lambda n: tree_at(max(2.0 ** -(n + 2), 2.0 ** -20)),
            candidate=lim,
        )
    ]
    diagonal = DiagonalFamily(generator=gen2, row_limit=row_limit, overall=lim)
    return probes, diagonal
