"""Broken gradient flows, basis neighborhoods and limit extraction.

A q-times broken flow is a chain of q+1 unparameterized flow segments
joined at critical points of strictly decreasing Morse index. Four
families exist, distinguished by the outer ends: both critical (morse),
fold start (fold_emanating), fold end (fold_terminating), or both fold
ends (singular).

A basis neighborhood W(lambda, U-, U+) fixes a Morse neighborhood per
chain point plus exit and entry windows around lambda's own boundary
crossings; a possibly less-broken mu belongs to it when its components
connect an order-preserving subset of lambda's chain and cross through
the windows at the points they actually connect. Fold ends carry windows
on the fold locus instead, standing in for the pair of 1-jet-lift
windows (the base point plus the cusp pair's sheet labels pin both).

extract_limit implements the compactness argument constructively: pass
to a sub-run of constant combinatorics, cluster and extrapolate the exit
points on the compact exit sphere (or the fold endpoints on the fold
locus), follow the limiting flow, steer it onto the stable manifold of
the breaking point by bisection when it must end at a saddle, recurse,
and certify the result with a ladder of shrinking neighborhoods. An
uncertifiable extraction raises Inconclusive rather than guessing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .flow import (
    CriticalEnd,
    DEFAULT_OPTIONS,
    FlowOptions,
    FoldEnd,
    MaximalFlow,
    flows_equal,
    integrate_descending,
    integrate_maximal,
)
from .morse import CriticalPoint, MorseNeighborhood, critical_points, default_neighborhoods
from .scenario import DifferenceField

__all__ = [
    "AssemblyError",
    "InconclusiveError",
    "Family",
    "BrokenFlow",
    "NeighborhoodSpec",
    "LimitResult",
    "from_flow",
    "assemble",
    "make_neighborhood",
    "contains",
    "refine",
    "extract_limit",
    "broken_equal",
    "LADDER_RADII",
]

LADDER_RADII = (0.05, 0.025, 0.0125, 0.00625)
CLUSTER_RADIUS = 1e-3
MIN_RUN = 8


class AssemblyError(ValueError):
    """Segment list violates a broken-flow invariant."""


class InconclusiveError(RuntimeError):
    """No certified limit at the configured resolution. Never a wrong
    certificate: diagnostics say what failed."""

    def __init__(self, msg: str, diagnostics: dict | None = None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class Family:
    kind: str  # morse | fold_emanating | fold_terminating | singular
    start: tuple | None = None  # fixed start critical point key
    end: tuple | None = None  # fixed end critical point key


@dataclass
class BrokenFlow:
    family: Family
    segments: list[MaximalFlow]
    chain: list[CriticalPoint]
    field: DifferenceField

    @property
    def q(self) -> int:
        return len(self.chain)

    @property
    def start_cp(self) -> CriticalPoint | None:
        ev = self.segments[0].start_event
        return ev.cp if isinstance(ev, CriticalEnd) else None

    @property
    def end_cp(self) -> CriticalPoint | None:
        ev = self.segments[-1].end_event
        return ev.cp if isinstance(ev, CriticalEnd) else None

    @property
    def fold_start(self) -> FoldEnd | None:
        ev = self.segments[0].start_event
        return ev if isinstance(ev, FoldEnd) else None

    @property
    def fold_end(self) -> FoldEnd | None:
        ev = self.segments[-1].end_event
        return ev if isinstance(ev, FoldEnd) else None

    def chain_keys(self) -> tuple:
        return tuple(c.key() for c in self.chain)

    def signature(self) -> tuple:
        fs = self.fold_start
        fe = self.fold_end
        return (
            self.family,
            self.chain_keys(),
            fs.component.id if fs else None,
            fe.component.id if fe else None,
        )

    def anchors(self) -> list[tuple]:
        """[('cp', c) | ('fold', event), ...] from start to end, one per joint."""
        out = []
        if self.start_cp is not None:
            out.append(("cp", self.start_cp))
        else:
            out.append(("fold", self.fold_start))
        for c in self.chain:
            out.append(("cp", c))
        if self.end_cp is not None:
            out.append(("cp", self.end_cp))
        else:
            out.append(("fold", self.fold_end))
        return out


def _family_of_class(kind: str, flow: MaximalFlow) -> Family:
    fc = flow.flow_class
    if kind == "morse":
        return Family("morse", fc.start.key(), fc.end.key())
    if kind == "fold_emanating":
        return Family("fold_emanating", None, fc.end.key())
    if kind == "fold_terminating":
        return Family("fold_terminating", fc.start.key(), None)
    return Family("singular")


def from_flow(flow: MaximalFlow) -> BrokenFlow:
    """Wrap an unbroken flow as a 0-times broken flow."""
    kind = flow.flow_class.kind
    if kind == "chart_truncated":
        raise AssemblyError("chart-truncated flows carry no moduli family")
    return BrokenFlow(
        family=_family_of_class(kind, flow),
        segments=[flow],
        chain=[],
        field=flow.field,
    )


def assemble(family_kind: str, segments: list[MaximalFlow]) -> BrokenFlow:
    """Validate and build a broken flow; raises AssemblyError naming the
    violated invariant."""
    if not segments:
        raise AssemblyError("empty segment list")
    field = segments[0].field
    for s in segments[1:]:
        if s.field.key() != field.key():
            raise AssemblyError("segments belong to different difference fields")

    kinds = [s.flow_class.kind for s in segments]
    n = len(segments)
    if family_kind == "morse":
        pattern_ok = all(k == "morse" for k in kinds)
    elif family_kind == "fold_emanating":
        pattern_ok = kinds[0] == "fold_emanating" and all(
            k == "morse" for k in kinds[1:]
        )
    elif family_kind == "fold_terminating":
        pattern_ok = kinds[-1] == "fold_terminating" and all(
            k == "morse" for k in kinds[:-1]
        )
    elif family_kind == "singular":
        if n == 1:
            pattern_ok = kinds[0] == "singular"
        else:
            pattern_ok = (
                kinds[0] == "fold_emanating"
                and kinds[-1] == "fold_terminating"
                and all(k == "morse" for k in kinds[1:-1])
            )
    else:
        raise AssemblyError(f"unknown family {family_kind!r}")
    if not pattern_ok:
        raise AssemblyError(
            f"segment classes {kinds} do not match the {family_kind} pattern"
        )

    # consecutive segments must share their joint critical point
    chain: list[CriticalPoint] = []
    for a, b in zip(segments, segments[1:]):
        ea = a.end_event
        eb = b.start_event
        if not (isinstance(ea, CriticalEnd) and isinstance(eb, CriticalEnd)):
            raise AssemblyError("interior joints must be critical points")
        if ea.cp.key() != eb.cp.key():
            raise AssemblyError(
                f"segment endpoint mismatch at joint: {ea.cp.location} vs "
                f"{eb.cp.location}"
            )
        chain.append(ea.cp)

    # strict Morse index descent over the encountered critical points
    cps_along: list[CriticalPoint] = []
    first = segments[0].start_event
    if isinstance(first, CriticalEnd):
        cps_along.append(first.cp)
    cps_along.extend(chain)
    last = segments[-1].end_event
    if isinstance(last, CriticalEnd):
        cps_along.append(last.cp)
    constant_single = n == 1 and segments[0].constant
    if not constant_single:
        for a, b in zip(cps_along, cps_along[1:]):
            if not a.index > b.index:
                raise AssemblyError(
                    f"Morse index does not strictly decrease: {a.index} at "
                    f"{a.location} followed by {b.index} at {b.location}"
                )

    # finiteness of the stratification: the interior chain visits distinct
    # critical points, so a flow cannot break more often than there are
    # critical points in the field
    if n - 1 > len(critical_points(field)):
        raise AssemblyError(
            f"{n - 1} breakings exceed the critical point count of the field"
        )

    # family fixed endpoints come from the outer segments
    if family_kind == "morse":
        fam = Family("morse", cps_along[0].key(), cps_along[-1].key())
    elif family_kind == "fold_emanating":
        fam = Family("fold_emanating", None, cps_along[-1].key())
    elif family_kind == "fold_terminating":
        fam = Family("fold_terminating", cps_along[0].key(), None)
    else:
        fam = Family("singular")
    return BrokenFlow(family=fam, segments=list(segments), chain=chain, field=field)


# boundary crossings ---------------------------------------------------------


def _exit_crossing(flow: MaximalFlow, nbhd: MorseNeighborhood, after_t=None):
    """Earliest crossing of the exit level Q = -eps near the center, at or
    after `after_t`. Returns (t, wrapped point) or None."""
    chart = flow.chart
    c = nbhd.center
    eps = nbhd.epsilon
    ball = 1.5 * nbhd.bounding_radius
    ts, ps = flow.times, flow.points
    i0 = 0
    if after_t is not None:
        while i0 < len(ts) and ts[i0] < after_t:
            i0 += 1
        i0 = max(i0 - 1, 0)
    prev_q = None
    prev_t = None
    for i in range(i0, len(ts)):
        p = chart.wrap(ps[i])
        _, _, _, q = nbhd.coords(p)
        inside = chart.distance(p, c.location) <= ball
        if prev_q is not None and prev_q > -eps >= q and inside:
            lo, hi = prev_t, ts[i]
            for _ in range(200):
                if hi - lo < 1e-15 * max(1.0, abs(hi)):
                    break
                mid = 0.5 * (lo + hi)
                _, _, _, qm = nbhd.coords(flow.wrapped_point(mid))
                if qm <= -eps:
                    hi = mid
                else:
                    lo = mid
            return hi, flow.wrapped_point(hi)
        if i == i0 and inside and q <= -eps + 1e-7:
            return ts[i], p
        prev_q, prev_t = q, ts[i]
    return None


def _entry_crossing(flow: MaximalFlow, nbhd: MorseNeighborhood, before_t=None):
    """Latest crossing of the entry level Q = +eps near the center, at or
    before `before_t`. Returns (t, wrapped point) or None."""
    chart = flow.chart
    c = nbhd.center
    eps = nbhd.epsilon
    ball = 1.5 * nbhd.bounding_radius
    ts, ps = flow.times, flow.points
    i1 = len(ts) - 1
    if before_t is not None:
        while i1 > 0 and ts[i1] > before_t:
            i1 -= 1
        i1 = min(i1 + 1, len(ts) - 1)
    for i in range(i1, 0, -1):
        p_hi = chart.wrap(ps[i])
        p_lo = chart.wrap(ps[i - 1])
        _, _, _, q_hi = nbhd.coords(p_hi)
        _, _, _, q_lo = nbhd.coords(p_lo)
        inside = chart.distance(p_hi, c.location) <= ball
        if q_lo >= eps > q_hi and inside:
            lo, hi = ts[i - 1], ts[i]
            for _ in range(200):
                if hi - lo < 1e-15 * max(1.0, abs(hi)):
                    break
                mid = 0.5 * (lo + hi)
                _, _, _, qm = nbhd.coords(flow.wrapped_point(mid))
                if qm < eps:
                    hi = mid
                else:
                    lo = mid
            return lo, flow.wrapped_point(lo)
    p0 = chart.wrap(ps[0])
    _, _, _, q0 = nbhd.coords(p0)
    if chart.distance(p0, c.location) <= ball and q0 >= eps - 1e-7:
        return ts[0], p0
    return None


def _closest_time(flow: MaximalFlow, location, after_t=None):
    """(time, distance) of the node nearest to `location`."""
    chart = flow.chart
    best = (None, float("inf"))
    for t, p in zip(flow.times, flow.points):
        if after_t is not None and t < after_t:
            continue
        d = chart.distance(chart.wrap(p), location)
        if d < best[1]:
            best = (t, d)
    return best


# neighborhood specs ---------------------------------------------------------


@dataclass
class NeighborhoodSpec:
    base: BrokenFlow
    nbhds: dict  # cp key -> MorseNeighborhood
    exit_centers: dict  # cp key -> point
    entry_centers: dict  # cp key -> point
    exit_radii: dict  # cp key -> radius
    entry_radii: dict  # cp key -> radius
    fold_start_center: tuple | None = None
    fold_start_radius: float | None = None
    fold_end_center: tuple | None = None
    fold_end_radius: float | None = None


def make_neighborhood(
    base: BrokenFlow, radius: float, nbhds: dict | None = None
) -> NeighborhoodSpec:
    """Basis neighborhood with all windows of the given radius, centered at
    the base flow's own crossings and fold endpoints."""
    if nbhds is None:
        nbhds = default_neighborhoods(base.field)
    exit_centers = {}
    entry_centers = {}
    anchors = base.anchors()
    for k, seg in enumerate(base.segments):
        kind_a, a = anchors[k]
        kind_b, b = anchors[k + 1]
        if kind_a == "cp" and not seg.constant:
            cr = _exit_crossing(seg, nbhds[a.key()])
            if cr is None:
                raise AssemblyError(
                    f"segment {k} has no exit crossing at {a.location}"
                )
            exit_centers[a.key()] = tuple(cr[1])
        if kind_b == "cp" and not seg.constant:
            cr = _entry_crossing(seg, nbhds[b.key()])
            if cr is None:
                raise AssemblyError(
                    f"segment {k} has no entry crossing at {b.location}"
                )
            entry_centers[b.key()] = tuple(cr[1])
    spec = NeighborhoodSpec(
        base=base,
        nbhds=nbhds,
        exit_centers=exit_centers,
        entry_centers=entry_centers,
        exit_radii={k: radius for k in exit_centers},
        entry_radii={k: radius for k in entry_centers},
    )
    fs = base.fold_start
    if fs is not None:
        spec.fold_start_center = tuple(fs.point)
        spec.fold_start_radius = radius
    fe = base.fold_end
    if fe is not None:
        spec.fold_end_center = tuple(fe.point)
        spec.fold_end_radius = radius
    return spec


def _subsequence_positions(sub: tuple, full: tuple):
    """Positions mapping sub into full order-preservingly, or None."""
    pos = []
    j = 0
    for key in sub:
        while j < len(full) and full[j] != key:
            j += 1
        if j == len(full):
            return None
        pos.append(j)
        j += 1
    return pos


def contains(W: NeighborhoodSpec, mu: BrokenFlow) -> bool:
    """Membership of mu in the basis neighborhood W. False on any
    structural mismatch, never an error."""
    lam = W.base
    if mu.field.key() != lam.field.key():
        return False
    if mu.family != lam.family:
        return False
    fs_l, fs_m = lam.fold_start, mu.fold_start
    fe_l, fe_m = lam.fold_end, mu.fold_end
    if (fs_l is None) != (fs_m is None) or (fe_l is None) != (fe_m is None):
        return False
    chart = lam.field.chart
    if fs_l is not None:
        if fs_m.component.id != fs_l.component.id:
            return False
        if chart.distance(fs_m.point, W.fold_start_center) > W.fold_start_radius:
            return False
    if fe_l is not None:
        if fe_m.component.id != fe_l.component.id:
            return False
        if chart.distance(fe_m.point, W.fold_end_center) > W.fold_end_radius:
            return False
    pos = _subsequence_positions(mu.chain_keys(), lam.chain_keys())
    if pos is None:
        return False
    eta_slack = 1e-6
    anchors = mu.anchors()
    for k, seg in enumerate(mu.segments):
        kind_a, a = anchors[k]
        kind_b, b = anchors[k + 1]
        if seg.constant:
            continue
        if kind_a == "cp":
            key = a.key()
            if key in W.exit_centers:
                nb = W.nbhds[key]
                cr = _exit_crossing(seg, nb)
                if cr is None:
                    return False
                _, m2, p2, _ = nb.coords(cr[1])
                if p2 > nb.eta + eta_slack:
                    return False
                if chart.distance(cr[1], W.exit_centers[key]) > W.exit_radii[key]:
                    return False
        if kind_b == "cp":
            key = b.key()
            if key in W.entry_centers:
                nb = W.nbhds[key]
                cr = _entry_crossing(seg, nb)
                if cr is None:
                    return False
                _, m2, p2, _ = nb.coords(cr[1])
                if m2 > nb.eta + eta_slack:
                    return False
                if chart.distance(cr[1], W.entry_centers[key]) > W.entry_radii[key]:
                    return False
    return True


def refine(W1: NeighborhoodSpec, W2: NeighborhoodSpec) -> NeighborhoodSpec:
    """Windowwise intersection of two specs over the same base flow."""
    if W1.base is not W2.base and W1.base.signature() != W2.base.signature():
        raise ValueError("refine requires the same base flow")
    out = NeighborhoodSpec(
        base=W1.base,
        nbhds=W1.nbhds,
        exit_centers=dict(W1.exit_centers),
        entry_centers=dict(W1.entry_centers),
        exit_radii={
            k: min(W1.exit_radii[k], W2.exit_radii[k]) for k in W1.exit_radii
        },
        entry_radii={
            k: min(W1.entry_radii[k], W2.entry_radii[k]) for k in W1.entry_radii
        },
    )
    if W1.fold_start_center is not None:
        out.fold_start_center = W1.fold_start_center
        out.fold_start_radius = min(W1.fold_start_radius, W2.fold_start_radius)
    if W1.fold_end_center is not None:
        out.fold_end_center = W1.fold_end_center
        out.fold_end_radius = min(W1.fold_end_radius, W2.fold_end_radius)
    return out


def broken_equal(a: BrokenFlow, b: BrokenFlow, tol: float = 1e-5) -> bool:
    """Equality of broken flows via the canonical F parameterization of
    each component."""
    if a.family != b.family or a.chain_keys() != b.chain_keys():
        return False
    if len(a.segments) != len(b.segments):
        return False
    return all(
        flows_equal(x, y, tol=tol) for x, y in zip(a.segments, b.segments)
    )


# limit extraction -----------------------------------------------------------


@dataclass
class LimitResult:
    limit: BrokenFlow
    indices: list[int]
    certificate: dict


def _cluster(points: list, chart, radius: float, min_size: int = 3) -> list[int]:
    """Positions of the chosen convergent sub-run on a compact set.

    Prefers the maximal suffix whose consecutive gaps shrink monotonically
    and whose final gap is below the resolution; falls back to the densest
    ball of that radius.
    """
    n = len(points)
    if n == 0:
        raise InconclusiveError("no points to cluster")
    gaps = [chart.distance(points[k], points[k + 1]) for k in range(n - 1)]
    if gaps and gaps[-1] <= radius:
        i = n - 2
        while i > 0 and gaps[i - 1] >= gaps[i] - 1e-15:
            i -= 1
        if n - i >= min_size:
            return list(range(i, n))
    best: list[int] = []
    for anchor in points:
        cand = [i for i, p in enumerate(points) if chart.distance(p, anchor) <= radius]
        if len(cand) > len(best):
            best = cand
    if len(best) < min_size:
        raise InconclusiveError(
            "no convergent cluster at the configured resolution",
            {"cluster_radius": radius, "best_size": len(best), "points": points},
        )
    return best


def _extrapolate(points: list, chart, radius: float) -> list[float]:
    """Aitken extrapolation of a (roughly geometric) point sequence,
    computed in displacement coordinates off the last element."""
    if len(points) < 3:
        return chart.wrap(points[-1])
    p0, p1, p2 = points[-3], points[-2], points[-1]
    u0 = chart.displacement(p2, p0)
    u1 = chart.displacement(p2, p1)
    out = list(p2)
    for k in range(chart.dim):
        d21 = -u1[k]
        d10 = u1[k] - u0[k]
        denom = d21 - d10
        if abs(denom) < 1e-14:
            continue
        corr = -d21 * d21 / denom
        if abs(corr) > radius:
            continue
        out[k] += corr
    return chart.wrap(out)


def _truncate_at_closest(fl: MaximalFlow, cp: CriticalPoint) -> MaximalFlow:
    """Cut a flow at its closest approach to cp and snap the end there."""
    chart = fl.chart
    best_i, best_d = 0, float("inf")
    for i, p in enumerate(fl.points):
        d = chart.distance(chart.wrap(p), cp.location)
        if d < best_d:
            best_i, best_d = i, d
    i = max(best_i, 1)
    times = fl.times[: i + 1]
    points = [list(p) for p in fl.points[: i + 1]]
    vels = [list(v) for v in fl.velocities[: i + 1]]
    points[-1] = [
        points[-1][k] + chart.axis_delta(points[-1][k], cp.location[k], k)
        for k in range(chart.dim)
    ]
    vels[-1] = [0.0] * chart.dim
    fvalues = fl.fvalues[: i + 1]
    fvalues[-1] = cp.value
    from .flow import classify

    end = CriticalEnd(cp)
    return MaximalFlow(
        field=fl.field,
        times=times,
        points=points,
        velocities=vels,
        fvalues=fvalues,
        start_event=fl.start_event,
        end_event=end,
        flow_class=classify(fl.start_event, end),
        options=fl.options,
    )


def _unstable_side(fl: MaximalFlow, cp: CriticalPoint) -> float | None:
    """Signed unstable-frame coordinate of the flow at its closest pass by
    cp; the sign says on which side of the stable manifold it went."""
    chart = fl.chart
    t, d = _closest_time(fl, cp.location)
    if t is None or d > 0.5:
        return None
    vecs = [v for lam, v in zip(cp.eigenvalues, cp.eigenvectors) if lam < 0]
    if len(vecs) != 1:
        return None
    disp = chart.displacement(cp.location, chart.wrap(fl.point(t)))
    return sum(a * b for a, b in zip(vecs[0], disp))


class _Steerer:
    """1-parameter seed family s(d) steered onto the stable manifold of a
    target critical point by bisection on the passage side."""

    def __init__(self, field, seed, direction, opts, start_event):
        self.field = field
        self.seed = list(seed)
        self.direction = direction
        self.opts = opts
        self.start_event = start_event

    def flow_at(self, d: float) -> MaximalFlow:
        if self.direction is None:
            p = list(self.seed)
        else:
            p = [s + d * v for s, v in zip(self.seed, self.direction)]
        return integrate_descending(
            self.field, p, self.opts, start_event=self.start_event
        )

    def steer(self, target: CriticalPoint, span: float = 2e-2):
        fl0 = self.flow_at(0.0)
        if _ends_at_cp(fl0, target):
            return fl0
        s0 = _unstable_side(fl0, target)
        if s0 is None or self.direction is None:
            return None
        lo = hi = None
        d = 1e-8
        while d <= span:
            for cand in (d, -d):
                fl = self.flow_at(cand)
                if _ends_at_cp(fl, target):
                    return fl
                s = _unstable_side(fl, target)
                if s is not None and s * s0 < 0:
                    lo, hi = (0.0, cand) if cand > 0 else (cand, 0.0)
                    s_lo = s0 if cand > 0 else s
                    break
            if lo is not None:
                break
            d *= 4.0
        if lo is None:
            return None
        best = None
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            fl = self.flow_at(mid)
            if _ends_at_cp(fl, target):
                return fl
            s = _unstable_side(fl, target)
            best = fl
            if s is None:
                break
            if s * s_lo > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-16:
                break
        if best is not None:
            _, d_best = _closest_time(best, target.location)
            if d_best <= 1e-4:
                return _truncate_at_closest(best, target)
        return None


def _ends_at_cp(fl: MaximalFlow, cp: CriticalPoint) -> bool:
    return isinstance(fl.end_event, CriticalEnd) and fl.end_event.cp.key() == cp.key()


def _ends_at_fold(fl: MaximalFlow, comp_id: int) -> bool:
    return isinstance(fl.end_event, FoldEnd) and fl.end_event.component.id == comp_id


def _limit_component(
    field: DifferenceField,
    flows: dict,
    sel: list[int],
    start_anchor: tuple,
    end_anchor: tuple,
    nbhds: dict,
    cluster_radius: float,
    opts: FlowOptions,
):
    """Broken limit of one component sequence; returns (segments, sel)."""
    chart = field.chart
    steer_opts = replace(opts, snap_radius=3e-6)
    cps = critical_points(field)
    segments: list[MaximalFlow] = []
    cur = start_anchor
    after_ts = {i: None for i in sel}
    break_tol = 2e-3
    for _ in range(len(cps) + 1):
        # departure data at the current anchor
        if cur[0] == "fold":
            pts = [list(flows[i].start_event.point) for i in sel]
            keep = _cluster(pts, chart, cluster_radius)
            sel = [sel[j] for j in keep]
            seed = _extrapolate([pts[j] for j in keep], chart, cluster_radius)
            comp = cur[1].component
            # land the seed exactly on the fold
            seed[comp.axis] += chart.axis_delta(seed[comp.axis], comp.offset, comp.axis)
            start_event = None
            direction = None
            if chart.dim == 2:
                direction = [0.0, 0.0]
                direction[1 - comp.axis] = 1.0
        else:
            a = cur[1]
            nb = nbhds[a.key()]
            pts = []
            kept = []
            for i in sel:
                cr = _exit_crossing(flows[i], nb, after_ts[i])
                if cr is not None:
                    pts.append(list(cr[1]))
                    kept.append(i)
            sel = kept
            keep = _cluster(pts, chart, cluster_radius)
            sel = [sel[j] for j in keep]
            seed = _extrapolate([pts[j] for j in keep], chart, cluster_radius)
            start_event = CriticalEnd(a)
            direction = _steer_direction(a, nb, seed, chart)

        steerer = _Steerer(field, seed, direction, steer_opts, start_event)
        trial = steerer.flow_at(0.0)

        # does the trial resolve the component end directly?
        done = False
        if end_anchor[0] == "cp" and _ends_at_cp(trial, end_anchor[1]):
            done = True
        if end_anchor[0] == "fold" and _ends_at_fold(
            trial, end_anchor[1].component.id
        ):
            done = True

        # look for an intermediate breaking point the trial passes close by
        breaking = None
        exclude = {cur[1].key()} if cur[0] == "cp" else set()
        if end_anchor[0] == "cp":
            exclude.add(end_anchor[1].key())
        best_t = None
        for c in cps:
            if c.key() in exclude:
                continue
            t, d = _closest_time(trial, c.location)
            if d <= break_tol and (best_t is None or t < best_t):
                breaking, best_t = c, t
        if isinstance(trial.end_event, CriticalEnd) and breaking is None:
            ec = trial.end_event.cp
            if ec.key() not in exclude and (
                end_anchor[0] != "cp" or ec.key() != end_anchor[1].key()
            ):
                breaking = ec

        if breaking is None and done:
            segments.append(trial)
            return segments, sel
        if breaking is None and not done:
            if end_anchor[0] == "cp":
                steered = steerer.steer(end_anchor[1])
                if steered is not None:
                    segments.append(steered)
                    return segments, sel
            raise InconclusiveError(
                "limit flow does not reach the component end",
                {
                    "end_anchor": str(end_anchor),
                    "trial_end": str(trial.end_event),
                },
            )

        # breaking: steer onto the stable manifold of the breaking point
        steered = steerer.steer(breaking)
        if steered is None:
            raise InconclusiveError(
                f"cannot steer the limit flow into {breaking.location}",
                {"breaking": breaking.location},
            )
        segments.append(steered)
        for i in sel:
            t, d = _closest_time(flows[i], breaking.location, after_ts[i])
            after_ts[i] = t
        cur = ("cp", breaking)
    raise InconclusiveError("breaking chain exceeds the critical point count")


def _steer_direction(a: CriticalPoint, nb: MorseNeighborhood, seed, chart):
    """Transverse direction for steering seeds that depart from cp a."""
    unstable = [v for lam, v in zip(a.eigenvalues, a.eigenvectors) if lam < 0]
    stable = [v for lam, v in zip(a.eigenvalues, a.eigenvectors) if lam >= 0]
    if chart.dim == 1:
        return None
    if len(unstable) == 2:
        # rotate within the exit sphere: tangent of the circle at the seed
        disp = chart.displacement(a.location, seed)
        norm = math.sqrt(sum(d * d for d in disp))
        if norm < 1e-12:
            return None
        return [-disp[1] / norm, disp[0] / norm]
    if len(unstable) == 1 and stable:
        return list(stable[0])
    return None


def extract_limit(
    seq: list[BrokenFlow],
    cluster_radius: float = CLUSTER_RADIUS,
    min_run: int = MIN_RUN,
    ladder_radii: tuple = LADDER_RADII,
    opts: FlowOptions = DEFAULT_OPTIONS,
) -> LimitResult:
    """Certified broken limit of a sequence of broken flows.

    Splits off a sub-run of constant combinatorics, extracts the limit per
    component by the cluster/extrapolate/steer induction, and certifies
    the result by neighborhood containment along a shrinking ladder.
    """
    if len(seq) < min_run:
        raise InconclusiveError(
            f"sequence length {len(seq)} below the minimum run {min_run}"
        )
    sigs = [b.signature() for b in seq]
    counts: dict = {}
    for s in sigs:
        counts[s] = counts.get(s, 0) + 1
    best_sig = max(counts, key=lambda s: (counts[s], sigs[::-1].index(s) * -1))
    sel = [i for i, s in enumerate(sigs) if s == best_sig]
    if len(sel) < min_run:
        raise InconclusiveError(
            "no constant-combinatorics sub-run of the minimum length",
            {"counts": {str(k): v for k, v in counts.items()}},
        )
    proto = seq[sel[-1]]
    field = proto.field
    nbhds = default_neighborhoods(field)
    anchors = proto.anchors()

    segments: list[MaximalFlow] = []
    for k in range(len(proto.segments)):
        flows = {i: seq[i].segments[k] for i in sel}
        if proto.segments[k].constant:
            segments.append(proto.segments[k])
            continue
        segs, sel = _limit_component(
            field,
            flows,
            sel,
            anchors[k],
            anchors[k + 1],
            nbhds,
            cluster_radius,
            opts,
        )
        segments.extend(segs)
        if len(sel) < 3:
            raise InconclusiveError("subsequence exhausted during extraction")

    limit = assemble(proto.family.kind, segments)
    cert = _certify(limit, seq, sel, ladder_radii, nbhds)
    return LimitResult(limit=limit, indices=sel, certificate=cert)


def _certify(limit, seq, sel, ladder_radii, nbhds) -> dict:
    ladder = []
    for r in ladder_radii:
        W = make_neighborhood(limit, r, nbhds)
        flags = [contains(W, seq[i]) for i in sel]
        if not flags[-1]:
            raise InconclusiveError(
                "certificate fails at the last subsequence element",
                {"radius": r, "flags": flags, "indices": sel},
            )
        j = len(flags) - 1
        while j > 0 and flags[j - 1]:
            j -= 1
        ladder.append({"radius": r, "tail_index": sel[j]})
    return {"ladder": ladder, "indices": list(sel)}
