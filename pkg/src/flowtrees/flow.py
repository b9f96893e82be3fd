"""Maximal descending gradient flows of difference fields.

The integrator is an adaptive Dormand-Prince 4(5) scheme with cubic
Hermite dense output per accepted step. Events are detected on accepted
steps and refined by bisection on the interpolant:

  * the signed fold offset reaching zero (fold hit),
  * leaving the chart through a non-periodic face (chart exit),
  * entering the snap radius of a critical point (infinite end, snapped).

Cusp sheets are evaluated with the normal coordinate clamped to zero so
that trial stages slightly past a fold stay finite; the fold-limit
gradient is the continuous extension shared by the cusp pair.

Flows are stored with a time parameter but compared and resampled in the
canonical F-value parameterization, which is strictly decreasing along
any nonconstant flow and kills the reparameterization ambiguity.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field as dc_field, replace

from .morse import CriticalPoint, critical_points
from .scenario import DifferenceField, FoldComponent

__all__ = [
    "StiffError",
    "TransversalityViolation",
    "FlowOptions",
    "CriticalEnd",
    "FoldEnd",
    "ChartEnd",
    "FlowClass",
    "MaximalFlow",
    "JetLift",
    "integrate_maximal",
    "classify",
    "jet_lift",
    "lift_velocity",
    "contact_order",
    "flows_equal",
]


class StiffError(RuntimeError):
    """Integration stalled without resolving an event."""

    def __init__(self, msg: str, last_point=None):
        super().__init__(msg)
        self.last_point = last_point


class TransversalityViolation(RuntimeError):
    """Fold contact order exceeds the chart dimension (or is unresolvable)."""


@dataclass(frozen=True)
class FlowOptions:
    rtol: float = 1e-10
    atol: float = 1e-12
    h_init: float = 1e-3
    h_min: float = 1e-13
    t_max: float = 400.0
    max_steps: int = 200000
    snap_radius: float = 1e-8
    fold_hit_tol: float = 1e-12
    cp_seeds: int = 24
    cp_tol: float = 1e-10

    def key(self) -> tuple:
        return (
            self.rtol,
            self.atol,
            self.t_max,
            self.snap_radius,
            self.fold_hit_tol,
            self.cp_seeds,
            self.cp_tol,
        )


DEFAULT_OPTIONS = FlowOptions()


# endpoint events ------------------------------------------------------------


@dataclass(frozen=True)
class CriticalEnd:
    cp: CriticalPoint

    @property
    def point(self):
        return self.cp.location


@dataclass(frozen=True)
class FoldEnd:
    component: FoldComponent
    point: tuple[float, ...]
    contact_order: int | None = None
    also_components: tuple[int, ...] = ()  # extra folds within hit tolerance

    @property
    def multiplicity(self) -> int:
        return 1 + len(self.also_components)


@dataclass(frozen=True)
class ChartEnd:
    point: tuple[float, ...]


@dataclass(frozen=True)
class FlowClass:
    kind: str  # morse | fold_emanating | fold_terminating | singular | chart_truncated
    start: object = None
    end: object = None


def classify(start_event, end_event) -> FlowClass:
    s_cp = isinstance(start_event, CriticalEnd)
    e_cp = isinstance(end_event, CriticalEnd)
    s_fold = isinstance(start_event, FoldEnd)
    e_fold = isinstance(end_event, FoldEnd)
    if s_cp and e_cp:
        return FlowClass("morse", start_event.cp, end_event.cp)
    if s_fold and e_cp:
        return FlowClass("fold_emanating", start_event, end_event.cp)
    if s_cp and e_fold:
        return FlowClass("fold_terminating", start_event.cp, end_event)
    if s_fold and e_fold:
        return FlowClass("singular", start_event, end_event)
    return FlowClass("chart_truncated", start_event, end_event)


# dense output ---------------------------------------------------------------


def _hermite(t0, x0, v0, t1, x1, v1, t):
    h = t1 - t0
    if h == 0.0:
        return list(x0)
    s = (t - t0) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return [
        h00 * a + h10 * h * va + h01 * b + h11 * h * vb
        for a, va, b, vb in zip(x0, v0, x1, v1)
    ]


# Dormand-Prince tableau
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


class _Marcher:
    """One-directional march of dx/dtau = vel(x) with event detection."""

    def __init__(self, F: DifferenceField, vel, opts: FlowOptions, cps, start_fold=None):
        self.F = F
        self.chart = F.chart
        self.vel = vel
        self.opts = opts
        self.cps = cps
        self.folds = F.fold_components()
        self.start_fold = start_fold  # component id to ignore while leaving it

    def offset(self, comp: FoldComponent, x) -> float:
        return comp.signed_offset(self.chart.wrap(x), self.chart)

    def run(self, x0):
        """Returns (nodes, event). nodes = list of (tau, x, v)."""
        opts = self.opts
        n = self.chart.dim
        x = list(map(float, x0))
        t = 0.0
        v = self.vel(x)
        nodes = [(t, list(x), list(v))]
        h = opts.h_init
        leaving_fold = self.start_fold
        for _ in range(opts.max_steps):
            if t >= opts.t_max:
                raise StiffError(
                    f"no event before t_max={opts.t_max} (last point {x})", tuple(x)
                )
            h = min(h, opts.t_max - t + 1e-9)
            # one attempted RK step
            k = [v]
            failed = False
            for i in range(1, 7):
                xi = [
                    x[d] + h * sum(_A[i][j] * k[j][d] for j in range(i))
                    for d in range(n)
                ]
                try:
                    k.append(self.vel(xi))
                except Exception:
                    failed = True
                    break
            if failed:
                h *= 0.25
                if h < opts.h_min:
                    raise StiffError("velocity evaluation failed", tuple(x))
                continue
            x5 = [x[d] + h * sum(_B5[i] * k[i][d] for i in range(7)) for d in range(n)]
            x4 = [x[d] + h * sum(_B4[i] * k[i][d] for i in range(7)) for d in range(n)]
            err = 0.0
            for d in range(n):
                sc = opts.atol + opts.rtol * max(abs(x[d]), abs(x5[d]))
                err = max(err, abs(x5[d] - x4[d]) / sc)
            if err > 1.0:
                h = max(opts.h_min, h * max(0.2, 0.9 * err ** -0.2))
                if h <= opts.h_min:
                    d_fold, comp = self._nearest_fold(x)
                    if comp is not None and d_fold < 1e-7:
                        ev = self._fold_event_here(comp, t, x)
                        nodes.append((t, self._project_fold(comp, x), [0.0] * n))
                        return nodes, ev
                    raise StiffError("step size underflow", tuple(x))
                continue
            try:
                v5 = self.vel(x5)
            except Exception:
                h *= 0.25
                continue
            t1 = t + h
            seg = (t, list(x), list(v), t1, list(x5), list(v5))

            ev = self._check_events(seg, leaving_fold)
            if ev is not None:
                _te, _pe, event, final_node = ev
                nodes.append(final_node)
                return nodes, event

            x, v, t = x5, v5, t1
            nodes.append((t, list(x), list(v)))
            if leaving_fold is not None:
                comp = next(c for c in self.folds if c.id == leaving_fold)
                if self.offset(comp, x) > 100.0 * opts.fold_hit_tol:
                    leaving_fold = None
            h = min(h * min(5.0, 0.9 * err ** -0.2 if err > 0 else 5.0), 1.0)
        raise StiffError("max step count exceeded", tuple(x))

    # event machinery

    def _nearest_fold(self, x):
        best = (float("inf"), None)
        for c in self.folds:
            d = abs(self.offset(c, x))
            if d < best[0]:
                best = (d, c)
        return best

    def _fold_event_here(self, comp, t, x):
        p = self._project_fold(comp, x)
        also = tuple(
            c.id
            for c in self.folds
            if c.id != comp.id and abs(self.offset(c, p)) < 1e-9
        )
        return FoldEnd(comp, tuple(self.chart.wrap(p)), None, also)

    def _project_fold(self, comp, x):
        y = list(x)
        # move the axis coordinate onto the fold, nearest periodic image
        delta = self.chart.axis_delta(y[comp.axis], comp.offset, comp.axis)
        y[comp.axis] += delta
        return y

    def _check_events(self, seg, leaving_fold):
        """Earliest event in the step, or None.

        Returns (tau, point, event, final_node) where final_node is the
        (tau, x, v) triple terminating the path.
        """
        t0, x0, v0, t1, x1, v1 = seg
        hits = []

        # chart exit
        if not self.chart.contains(x1):
            te = self._bisect(seg, lambda p: -1.0 if not self.chart.contains(p) else 1.0)
            pe = _hermite(t0, x0, v0, t1, x1, v1, te)
            hits.append((te, "chart", ChartEnd(tuple(self.chart.wrap(pe))), pe))

        # fold hits
        tol = self.opts.fold_hit_tol
        for comp in self.folds:
            if leaving_fold is not None and comp.id == leaving_fold:
                continue
            u0 = self.offset(comp, x0)
            u1 = self.offset(comp, x1)
            if u1 < tol and u1 < u0:
                g = lambda p, c=comp: self.offset(c, p) - tol
                te = self._bisect(seg, g) if u0 > tol else t0
                pe = self._project_fold(
                    comp, _hermite(t0, x0, v0, t1, x1, v1, te)
                )
                ev = FoldEnd(
                    comp,
                    tuple(self.chart.wrap(pe)),
                    None,
                    tuple(
                        c.id
                        for c in self.folds
                        if c.id != comp.id and abs(self.offset(c, pe)) < 1e-9
                    ),
                )
                hits.append((te, "fold", ev, pe))

        # critical point snap
        for cp in self.cps:
            d = self.chart.distance(x1, cp.location)
            if d <= self.opts.snap_radius:
                # place the endpoint on the unwrapped image of c nearest x1
                loc = [
                    x1[k] + self.chart.axis_delta(x1[k], cp.location[k], k)
                    for k in range(self.chart.dim)
                ]
                hits.append((t1, "cp", CriticalEnd(cp), loc))
                break

        if not hits:
            return None
        hits.sort(key=lambda h: h[0])
        te, _, event, pe = hits[0]
        final_node = (te, list(pe), [0.0] * self.chart.dim)
        return te, pe, event, final_node

    def _bisect(self, seg, g, iters: int = 200):
        """Earliest tau in the step with g <= 0 (g(t0) assumed > 0)."""
        t0, x0, v0, t1, x1, v1 = seg
        lo, hi = t0, t1
        for _ in range(iters):
            if hi - lo < 1e-16 * max(1.0, abs(hi)):
                break
            mid = 0.5 * (lo + hi)
            if g(_hermite(t0, x0, v0, t1, x1, v1, mid)) <= 0.0:
                hi = mid
            else:
                lo = mid
        return hi


# maximal flows --------------------------------------------------------------


@dataclass
class MaximalFlow:
    field: DifferenceField
    times: list[float]
    points: list[list[float]]  # unwrapped coordinates
    velocities: list[list[float]]  # descending-time derivatives
    fvalues: list[float]
    start_event: object
    end_event: object
    flow_class: FlowClass
    constant: bool = False
    options: FlowOptions = dc_field(default=DEFAULT_OPTIONS)

    @property
    def chart(self):
        return self.field.chart

    def point(self, t: float) -> list[float]:
        ts = self.times
        if t <= ts[0]:
            return list(self.points[0])
        if t >= ts[-1]:
            return list(self.points[-1])
        i = bisect_left(ts, t)
        return _hermite(
            ts[i - 1],
            self.points[i - 1],
            self.velocities[i - 1],
            ts[i],
            self.points[i],
            self.velocities[i],
            t,
        )

    def wrapped_point(self, t: float) -> list[float]:
        return self.chart.wrap(self.point(t))

    @property
    def f_start(self) -> float:
        return self.fvalues[0]

    @property
    def f_end(self) -> float:
        return self.fvalues[-1]

    def value_at(self, t: float) -> float:
        return self.field.value(self.wrapped_point(t), clamp=True)

    def time_at_value(self, f: float) -> float:
        """Inverse of the strictly decreasing map t -> F(x(t))."""
        if self.constant:
            return self.times[0]
        fs = self.fvalues
        if f >= fs[0]:
            return self.times[0]
        if f <= fs[-1]:
            return self.times[-1]
        lo_i = 0
        hi_i = len(fs) - 1
        # nodes are decreasing in F; binary search for the bracket
        while hi_i - lo_i > 1:
            mid = (lo_i + hi_i) // 2
            if fs[mid] >= f:
                lo_i = mid
            else:
                hi_i = mid
        lo, hi = self.times[lo_i], self.times[hi_i]
        for _ in range(200):
            if hi - lo < 1e-15 * max(1.0, abs(hi)):
                break
            mid = 0.5 * (lo + hi)
            if self.value_at(mid) >= f:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def point_at_value(self, f: float) -> list[float]:
        return self.wrapped_point(self.time_at_value(f))

    def first_time_where(self, g) -> float | None:
        """Earliest t with g(wrapped point) <= 0, scanning from the start."""
        ts, ps = self.times, self.points
        prev = g(self.chart.wrap(ps[0]))
        if prev <= 0.0:
            return ts[0]
        for i in range(1, len(ts)):
            cur = g(self.chart.wrap(ps[i]))
            if cur <= 0.0:
                lo, hi = ts[i - 1], ts[i]
                for _ in range(200):
                    if hi - lo < 1e-15 * max(1.0, abs(hi)):
                        break
                    mid = 0.5 * (lo + hi)
                    if g(self.wrapped_point(mid)) <= 0.0:
                        hi = mid
                    else:
                        lo = mid
                return hi
            prev = cur
        return None

    def last_time_where(self, g) -> float | None:
        """Latest t with g(wrapped point) <= 0, scanning from the end."""
        ts, ps = self.times, self.points
        if g(self.chart.wrap(ps[-1])) <= 0.0:
            return ts[-1]
        for i in range(len(ts) - 2, -1, -1):
            if g(self.chart.wrap(ps[i])) <= 0.0:
                lo, hi = ts[i], ts[i + 1]
                for _ in range(200):
                    if hi - lo < 1e-15 * max(1.0, abs(hi)):
                        break
                    mid = 0.5 * (lo + hi)
                    if g(self.wrapped_point(mid)) <= 0.0:
                        lo = mid
                    else:
                        hi = mid
                return lo
        return None

    def arc_length_nodes(self):
        """Cumulative chord-length per node."""
        s = [0.0]
        for i in range(1, len(self.points)):
            d = math.sqrt(
                sum((a - b) ** 2 for a, b in zip(self.points[i], self.points[i - 1]))
            )
            s.append(s[-1] + d)
        return s


def _velocity(F: DifferenceField, sign: float):
    def vel(x):
        g = F.grad(x, clamp=True)
        return [sign * -gi for gi in g]

    return vel


def _descending_velocity(F: DifferenceField, x):
    g = F.grad(F.chart.wrap(x), clamp=True)
    return [-gi for gi in g]


def _on_fold(F: DifferenceField, x, tol: float):
    for comp in F.fold_components():
        if abs(comp.signed_offset(F.chart.wrap(x), F.chart)) <= tol:
            return comp
    return None


_FLOW_CACHE: dict = {}


def integrate_maximal(
    F: DifferenceField, x0, opts: FlowOptions = DEFAULT_OPTIONS
) -> MaximalFlow:
    key = (id(F.scenario), F.key(), tuple(round(float(v), 13) for v in x0), opts.key())
    if key not in _FLOW_CACHE:
        _FLOW_CACHE[key] = _integrate_maximal(F, x0, opts)
    return _FLOW_CACHE[key]


def _integrate_maximal(F, x0, opts) -> MaximalFlow:
    chart = F.chart
    x0 = chart.wrap(x0)
    if not F.in_domain(x0, slack=opts.fold_hit_tol):
        raise ValueError(f"start point {x0} outside the field domain")
    cps = critical_points(F, opts.cp_seeds, opts.cp_tol)

    for cp in cps:
        if chart.distance(x0, cp.location) <= 10.0 * opts.cp_tol:
            node = list(cp.location)
            ev = CriticalEnd(cp)
            return MaximalFlow(
                field=F,
                times=[0.0],
                points=[node],
                velocities=[[0.0] * chart.dim],
                fvalues=[cp.value],
                start_event=ev,
                end_event=ev,
                flow_class=FlowClass("morse", cp, cp),
                constant=True,
                options=opts,
            )

    start_comp = _on_fold(F, x0, 1e-9)
    fwd_nodes = bwd_nodes = None
    start_event = end_event = None

    if start_comp is not None:
        # starting on the fold: the motion direction decides which end it is
        proj = list(x0)
        proj[start_comp.axis] += chart.axis_delta(
            proj[start_comp.axis], start_comp.offset, start_comp.axis
        )
        v = _descending_velocity(F, proj)
        into = start_comp.sign * v[start_comp.axis]
        ev = FoldEnd(
            start_comp,
            tuple(chart.wrap(proj)),
            None,
            tuple(
                c.id
                for c in F.fold_components()
                if c.id != start_comp.id
                and abs(c.signed_offset(chart.wrap(proj), chart)) < 1e-9
            ),
        )
        if abs(into) <= 1e-12:
            # degenerate fold endpoint (normal velocity vanishing on the
            # fold itself): probe just inside the domain to find the side
            h = 1e-10
            probe = list(proj)
            probe[start_comp.axis] += start_comp.sign * h
            v2 = _descending_velocity(F, probe)
            into = start_comp.sign * v2[start_comp.axis]
            if abs(into) <= 1e-12:
                raise ValueError(
                    f"flow starts tangent to fold component {start_comp.id}"
                )
            speed = math.sqrt(sum(w * w for w in v2))
            launch, link = probe, (-h / speed, list(proj), v2)
        else:
            launch, link = proj, None
        if into > 0:
            start_event = ev
            m = _Marcher(F, _velocity(F, 1.0), opts, cps, start_fold=start_comp.id)
            fwd_nodes, end_event = m.run(launch)
            if link is not None:
                fwd_nodes = [link] + fwd_nodes
        else:
            end_event = ev
            m = _Marcher(F, _velocity(F, -1.0), opts, cps, start_fold=start_comp.id)
            bwd_nodes, start_event = m.run(launch)
            if link is not None:
                bwd_nodes = [link] + bwd_nodes
    else:
        mf = _Marcher(F, _velocity(F, 1.0), opts, cps)
        fwd_nodes, end_event = mf.run(x0)
        mb = _Marcher(F, _velocity(F, -1.0), opts, cps)
        bwd_nodes, start_event = mb.run(x0)

    times: list[float] = []
    points: list[list[float]] = []
    vels: list[list[float]] = []
    if bwd_nodes:
        for tau, p, _v in reversed(bwd_nodes):
            times.append(-tau)
            points.append(list(p))
    if fwd_nodes:
        start = 1 if bwd_nodes else 0
        for tau, p, _v in fwd_nodes[start:]:
            times.append(tau)
            points.append(list(p))
    # recompute descending velocities at the nodes; endpoint events get
    # honest one-sided values (zero at snapped critical points)
    for i, p in enumerate(points):
        if i == 0 and isinstance(start_event, CriticalEnd):
            vels.append([0.0] * chart.dim)
        elif i == len(points) - 1 and isinstance(end_event, CriticalEnd):
            vels.append([0.0] * chart.dim)
        else:
            vels.append(_descending_velocity(F, p))
    # snap critical endpoints exactly
    if isinstance(start_event, CriticalEnd):
        c = start_event.cp.location
        points[0] = [
            points[0][k] + chart.axis_delta(points[0][k], c[k], k)
            for k in range(chart.dim)
        ]
    if isinstance(end_event, CriticalEnd):
        c = end_event.cp.location
        points[-1] = [
            points[-1][k] + chart.axis_delta(points[-1][k], c[k], k)
            for k in range(chart.dim)
        ]
    fvalues = [F.value(chart.wrap(p), clamp=True) for p in points]
    if isinstance(start_event, CriticalEnd):
        fvalues[0] = start_event.cp.value
    if isinstance(end_event, CriticalEnd):
        fvalues[-1] = end_event.cp.value

    flow = MaximalFlow(
        field=F,
        times=times,
        points=points,
        velocities=vels,
        fvalues=fvalues,
        start_event=start_event,
        end_event=end_event,
        flow_class=classify(start_event, end_event),
        options=opts,
    )
    # attach contact orders to fold endpoints
    if isinstance(start_event, FoldEnd) and start_event.contact_order is None:
        order = _estimate_contact_order(flow, start_event, at_start=True)
        flow.start_event = replace(start_event, contact_order=order)
    if isinstance(end_event, FoldEnd) and end_event.contact_order is None:
        order = _estimate_contact_order(flow, end_event, at_start=False)
        flow.end_event = replace(flow.end_event, contact_order=order)
    flow.flow_class = classify(flow.start_event, flow.end_event)
    return flow


def integrate_descending(
    F: DifferenceField,
    x0,
    opts: FlowOptions = DEFAULT_OPTIONS,
    start_event=None,
) -> MaximalFlow:
    """Forward-only march from x0; used when the backward half is known.

    If start_event is a CriticalEnd, a node at the critical point is
    prepended so the path carries its full endpoint; otherwise the start
    stays a plain truncation at x0.
    """
    chart = F.chart
    x0 = chart.wrap(x0)
    cps = critical_points(F, opts.cp_seeds, opts.cp_tol)
    start_comp = _on_fold(F, x0, 1e-9)
    if start_comp is not None and start_event is None:
        return integrate_maximal(F, x0, opts)
    if isinstance(start_event, CriticalEnd) and start_comp is None:
        # prefer a genuinely integrated backward leg over the straight
        # head link, as long as it reaches the intended critical point
        full = integrate_maximal(F, x0, opts)
        if (
            isinstance(full.start_event, CriticalEnd)
            and chart.distance(
                full.start_event.cp.location, start_event.cp.location
            )
            <= 1e-9
        ):
            return full
    m = _Marcher(
        F,
        _velocity(F, 1.0),
        opts,
        cps,
        start_fold=start_comp.id if start_comp is not None else None,
    )
    nodes, end_event = m.run(list(x0))
    times = [tau for tau, _p, _v in nodes]
    points = [list(p) for _tau, p, _v in nodes]
    head_vel = None
    if isinstance(start_event, CriticalEnd):
        c = start_event.cp.location
        head = [
            points[0][k] + chart.axis_delta(points[0][k], c[k], k)
            for k in range(chart.dim)
        ]
        # pick the link duration so the interpolant stays close to the
        # straight segment from the critical point to the seed
        gap = [a - b for a, b in zip(points[0], head)]
        gap_len = math.sqrt(sum(g * g for g in gap))
        v_seed = _descending_velocity(F, points[0])
        speed = math.sqrt(sum(v * v for v in v_seed))
        dt = gap_len / speed if speed > 1e-12 and gap_len > 0 else 1.0
        head_vel = [g / dt if dt > 0 else 0.0 for g in gap]
        times = [times[0] - dt] + times
        points = [head] + points
    vels = []
    for i, p in enumerate(points):
        if i == 0 and head_vel is not None:
            vels.append(head_vel)
            continue
        at_cp = i == len(points) - 1 and isinstance(end_event, CriticalEnd)
        vels.append([0.0] * chart.dim if at_cp else _descending_velocity(F, p))
    if isinstance(end_event, CriticalEnd):
        c = end_event.cp.location
        points[-1] = [
            points[-1][k] + chart.axis_delta(points[-1][k], c[k], k)
            for k in range(chart.dim)
        ]
    fvalues = [F.value(chart.wrap(p), clamp=True) for p in points]
    if isinstance(start_event, CriticalEnd):
        fvalues[0] = start_event.cp.value
    if isinstance(end_event, CriticalEnd):
        fvalues[-1] = end_event.cp.value
    se = start_event if start_event is not None else ChartEnd(tuple(chart.wrap(points[0])))
    fl = MaximalFlow(
        field=F,
        times=times,
        points=points,
        velocities=vels,
        fvalues=fvalues,
        start_event=se,
        end_event=end_event,
        flow_class=classify(se, end_event),
        options=opts,
    )
    if isinstance(fl.end_event, FoldEnd) and fl.end_event.contact_order is None:
        order = _estimate_contact_order(fl, fl.end_event, at_start=False)
        fl.end_event = replace(fl.end_event, contact_order=order)
        fl.flow_class = classify(fl.start_event, fl.end_event)
    return fl


# classification helpers -----------------------------------------------------


def _estimate_contact_order(flow: MaximalFlow, event: FoldEnd, at_start: bool) -> int:
    order = _fit_contact_order(flow, event, at_start)
    if order > flow.chart.dim:
        raise TransversalityViolation(
            f"fold contact order {order} exceeds chart dimension {flow.chart.dim} "
            f"at {event.point}"
        )
    return order


def _fit_contact_order(flow: MaximalFlow, event: FoldEnd, at_start: bool) -> int:
    import numpy as np

    chart = flow.chart
    comp = event.component
    ts = flow.times
    if len(ts) < 2:
        raise TransversalityViolation("flow too short to estimate contact order")

    def u_of_t(t):
        return abs(comp.signed_offset(flow.wrapped_point(t), chart))

    t_hit = ts[0] if at_start else ts[-1]
    # widen a time window until the offset grows to a workable size
    idxs = range(1, len(ts)) if at_start else range(len(ts) - 2, -1, -1)
    u_max = max(u_of_t(ts[i]) for i in (range(len(ts))))
    cap = min(1e-3, 0.5 * u_max) if u_max > 0 else 0.0
    t_edge = None
    for i in idxs:
        if u_of_t(ts[i]) >= cap:
            t_edge = ts[i]
            break
    if t_edge is None:
        t_edge = ts[-1] if at_start else ts[0]

    m = 12
    samples = [t_hit + (t_edge - t_hit) * j / (m - 1) for j in range(m)]
    pts = [flow.wrapped_point(t) for t in samples]
    us = [comp.signed_offset(p, chart) for p in pts]
    # signed arc length from the hit
    ss = [0.0]
    for j in range(1, m):
        d = chart.distance(pts[j - 1], pts[j])
        ss.append(ss[-1] + d)
    span = ss[-1]
    if span <= 0:
        raise TransversalityViolation("degenerate sample window at fold hit")
    tau = [s / span for s in ss]
    u_scale = max(abs(u) for u in us)
    if u_scale < 1e-14:
        raise TransversalityViolation("fold offset below noise floor near hit")
    deg = chart.dim + 1
    A = np.array([[tk ** p for p in range(1, deg + 1)] for tk in tau])
    b = np.array(us) / u_scale
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    cmax = max(abs(float(c)) for c in coef)
    if cmax < 1e-7:
        raise TransversalityViolation("all fitted fold-offset derivatives vanish")
    thresh = max(1e-7, 1e-2 * cmax)
    for p, c in enumerate(coef, start=1):
        if abs(float(c)) >= thresh:
            return p
    raise TransversalityViolation("no fold-offset derivative above threshold")


def contact_order(flow: MaximalFlow, event: FoldEnd) -> int:
    """Smallest k with a nonvanishing k-th derivative of the signed fold
    offset along the flow at the hit."""
    if flow.start_event is not None and isinstance(flow.start_event, FoldEnd) and (
        flow.start_event.component.id == event.component.id
        and flow.start_event.point == event.point
    ):
        if flow.start_event.contact_order is not None:
            return flow.start_event.contact_order
        return _estimate_contact_order(flow, event, at_start=True)
    if isinstance(flow.end_event, FoldEnd) and (
        flow.end_event.component.id == event.component.id
        and flow.end_event.point == event.point
    ):
        if flow.end_event.contact_order is not None:
            return flow.end_event.contact_order
        return _estimate_contact_order(flow, event, at_start=False)
    raise ValueError("event does not belong to this flow")


# 1-jet lifts ----------------------------------------------------------------


@dataclass(frozen=True)
class JetLift:
    track1: tuple[tuple[tuple[float, float], object], ...]  # (param interval, sheet)
    track2: tuple[tuple[tuple[float, float], object], ...]
    meetings: tuple[float, ...]  # parameters where the lifts coincide on Sigma


def jet_lift(flow: MaximalFlow) -> JetLift:
    """Pair of continuous sheet-label tracks along the flow.

    Track 1 follows the field's upper sheet, track 2 the lower one; they
    meet exactly at fold endpoints owned by the field's own cusp pair.
    """
    if flow.flow_class.kind == "chart_truncated":
        raise ValueError("jet lift undefined for chart-truncated flows")
    t0, t1 = flow.times[0], flow.times[-1]
    pair_ids = {flow.field.upper, flow.field.lower}
    meetings = []
    for ev, t in ((flow.start_event, t0), (flow.end_event, t1)):
        if isinstance(ev, FoldEnd) and set(ev.component.pair) == pair_ids:
            meetings.append(t)
    return JetLift(
        track1=(((t0, t1), flow.field.upper),),
        track2=(((t0, t1), flow.field.lower),),
        meetings=tuple(meetings),
    )


def lift_velocity(flow: MaximalFlow, t: float, track: int):
    """Velocity of the lift of the flow on the given track's sheet.

    Returns (base velocity, covector derivative) at parameter t, i.e. the
    pushforward of the descending base velocity under x -> (x, df(x)).
    Track 1 runs with the flow, track 2 against it.
    """
    x = flow.wrapped_point(t)
    v = _descending_velocity(flow.field, x)
    sheet_id = flow.field.upper if track == 1 else flow.field.lower
    sheet = flow.field.scenario.sheet(sheet_id)
    h = sheet.hess(x, clamp=True)
    sign = 1.0 if track == 1 else -1.0
    base = [sign * vi for vi in v]
    cov = [sign * sum(h[r][c] * v[c] for c in range(len(v))) for r in range(len(v))]
    return base, cov


# equality of unparameterized flows ------------------------------------------


def flows_equal(
    a: MaximalFlow, b: MaximalFlow, tol: float = 1e-5, samples: int = 64
) -> bool:
    """Representative-free equality via the canonical F parameterization."""
    if a.field.key() != b.field.key():
        return False
    if a.constant or b.constant:
        if not (a.constant and b.constant):
            return False
        return a.chart.distance(a.points[0], b.points[0]) <= tol
    hi = min(a.f_start, b.f_start)
    lo = max(a.f_end, b.f_end)
    if abs(a.f_start - b.f_start) > tol or abs(a.f_end - b.f_end) > tol:
        return False
    if hi <= lo:
        return False
    for i in range(1, samples + 1):
        f = lo + (hi - lo) * i / (samples + 1)
        pa = a.point_at_value(f)
        pb = b.point_at_value(f)
        if a.chart.distance(pa, pb) > tol:
            return False
    return True
