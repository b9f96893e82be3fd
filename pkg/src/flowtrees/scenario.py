"""Multi-sheeted front scenarios over rectangular charts.

A scenario bundles a chart (dim 1 or 2, per-axis bounds, optional periodic
wrap), a finite list of local sheets, and the fold locus derived from the
cusp pairs. Sheets are either smooth (closed-form expression) or one half
of a standard cusp pair:

    f(x) = csign * (1/3) (2u)^(3/2) + b u + sum_i a_i x_i,   u >= 0

where ``u = sign * (x[axis] - offset)`` is the normal coordinate relative
to the fold hyperplane and ``csign`` is +1 for the upper branch, -1 for
the lower one. Both branches of a pair share (b, a), so their values and
differential limits agree on the fold.

Documents are JSON with top-level keys ``chart`` and ``sheets``; derived
``folds`` are emitted on round-trip. Smooth sheet expressions use the
grammar of :mod:`flowtrees.expressions`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .expressions import ExpressionError, compile_scalar_field, parse_expression

__all__ = [
    "ScenarioError",
    "DomainError",
    "Chart",
    "Sheet",
    "FoldComponent",
    "FoldLocus",
    "DifferenceField",
    "Scenario",
    "load_scenario",
    "loads_scenario",
    "dump_scenario",
]


class ScenarioError(ValueError):
    """Malformed scenario document or invariant violation."""


class DomainError(ValueError):
    """Point outside a sheet's domain."""


@dataclass(frozen=True)
class Chart:
    dim: int
    bounds: tuple[tuple[float, float], ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ScenarioError(f"chart dim must be 1 or 2, got {self.dim}")
        if len(self.bounds) != self.dim or len(self.periodic) != self.dim:
            raise ScenarioError("bounds/periodic length must equal dim")
        for lo, hi in self.bounds:
            if not hi > lo:
                raise ScenarioError(f"axis interval [{lo}, {hi}] has nonpositive length")

    def width(self, axis: int) -> float:
        lo, hi = self.bounds[axis]
        return hi - lo

    def contains(self, x, slack: float = 0.0) -> bool:
        for k in range(self.dim):
            if self.periodic[k]:
                continue
            lo, hi = self.bounds[k]
            if not (lo - slack <= x[k] <= hi + slack):
                return False
        return True

    def wrap(self, x) -> list[float]:
        """Map a possibly unwrapped point back into the fundamental domain."""
        out = list(map(float, x))
        for k in range(self.dim):
            if self.periodic[k]:
                lo, _ = self.bounds[k]
                out[k] = lo + (out[k] - lo) % self.width(k)
        return out

    def axis_delta(self, a: float, b: float, axis: int) -> float:
        """Signed displacement b - a, minimal image on periodic axes."""
        d = b - a
        if self.periodic[axis]:
            w = self.width(axis)
            d = (d + w / 2.0) % w - w / 2.0
        return d

    def displacement(self, a, b) -> list[float]:
        return [self.axis_delta(a[k], b[k], k) for k in range(self.dim)]

    def distance(self, a, b) -> float:
        return math.sqrt(sum(d * d for d in self.displacement(a, b)))


@dataclass(frozen=True)
class Sheet:
    """One local sheet of the front.

    Smooth sheets carry a compiled expression; cusp sheets carry the
    normal-form parameters. ``csign`` is +1 for the upper branch of the
    cusp pair and -1 for the lower one.
    """

    id: object
    kind: str  # "smooth" | "cusp_upper" | "cusp_lower"
    chart: Chart
    expr_text: str | None = None
    axis: int = 0
    offset: float = 0.0
    sign: int = 1
    b: float = 0.0
    a: tuple[float, ...] = ()
    _compiled: tuple = field(default=None, repr=False, compare=False)

    @property
    def is_cusp(self) -> bool:
        return self.kind in ("cusp_upper", "cusp_lower")

    @property
    def csign(self) -> int:
        return 1 if self.kind == "cusp_upper" else -1

    def normal_coord(self, x) -> float:
        return self.sign * (x[self.axis] - self.offset)

    def in_domain(self, x, slack: float = 0.0) -> bool:
        if not self.is_cusp:
            return True
        return self.normal_coord(x) >= -slack

    def _other_axes(self) -> list[int]:
        return [k for k in range(self.chart.dim) if k != self.axis]

    def value(self, x, clamp: bool = False) -> float:
        if not self.is_cusp:
            return self._compiled[0](x)
        u = self.normal_coord(x)
        if u < 0.0:
            if not clamp:
                raise DomainError(
                    f"sheet {self.id}: point {list(x)} on the wrong side of its fold "
                    f"(normal coordinate {u:g} < 0)"
                )
            u = 0.0
        v = self.csign * (1.0 / 3.0) * (2.0 * u) ** 1.5 + self.b * u
        for a_i, k in zip(self.a, self._other_axes()):
            v += a_i * x[k]
        return v

    def grad(self, x, clamp: bool = False) -> list[float]:
        if not self.is_cusp:
            return self._compiled[1](x)
        u = self.normal_coord(x)
        if u < 0.0:
            if not clamp:
                raise DomainError(
                    f"sheet {self.id}: point {list(x)} on the wrong side of its fold"
                )
            u = 0.0
        g = [0.0] * self.chart.dim
        # d/dx_axis of value(u(x)); on the fold this is the continuous
        # extension (b, a) shared by both branches
        g[self.axis] = self.sign * (self.csign * math.sqrt(2.0 * u) + self.b)
        for a_i, k in zip(self.a, self._other_axes()):
            g[k] = a_i
        return g

    def hess(self, x, clamp: bool = False) -> list[list[float]]:
        n = self.chart.dim
        if not self.is_cusp:
            return self._compiled[2](x)
        u = self.normal_coord(x)
        if u < 0.0 and clamp:
            u = 0.0
        if u <= 0.0:
            raise DomainError(f"sheet {self.id}: Hessian singular on the fold")
        h = [[0.0] * n for _ in range(n)]
        h[self.axis][self.axis] = self.csign / math.sqrt(2.0 * u)
        return h


@dataclass(frozen=True)
class FoldComponent:
    id: int
    axis: int
    offset: float
    sign: int
    pair: tuple  # (upper sheet id, lower sheet id)

    def signed_offset(self, x, chart: Chart) -> float:
        """Normal coordinate of x; zero exactly on the component."""
        return self.sign * chart.axis_delta(self.offset, x[self.axis], self.axis)


@dataclass(frozen=True)
class FoldLocus:
    components: tuple[FoldComponent, ...]

    def __bool__(self):
        return bool(self.components)


@dataclass(frozen=True)
class DifferenceField:
    """F_ij = f_i - f_j with analytic derivatives on the common domain."""

    scenario: "Scenario"
    upper: object
    lower: object

    def __post_init__(self):
        if self.upper == self.lower:
            raise ScenarioError("difference field requires two distinct sheets")

    @property
    def chart(self) -> Chart:
        return self.scenario.chart

    def _sheets(self) -> tuple[Sheet, Sheet]:
        return self.scenario.sheet(self.upper), self.scenario.sheet(self.lower)

    def in_domain(self, x, slack: float = 0.0) -> bool:
        si, sj = self._sheets()
        return si.in_domain(x, slack) and sj.in_domain(x, slack)

    def value(self, x, clamp: bool = False) -> float:
        si, sj = self._sheets()
        return si.value(x, clamp) - sj.value(x, clamp)

    def grad(self, x, clamp: bool = False) -> list[float]:
        si, sj = self._sheets()
        gi = si.grad(x, clamp)
        gj = sj.grad(x, clamp)
        return [p - q for p, q in zip(gi, gj)]

    def hess(self, x, clamp: bool = False) -> list[list[float]]:
        si, sj = self._sheets()
        hi = si.hess(x, clamp)
        hj = sj.hess(x, clamp)
        return [[p - q for p, q in zip(ri, rj)] for ri, rj in zip(hi, hj)]

    def fold_components(self) -> list[FoldComponent]:
        """Fold components bounding this field's domain."""
        ids = {self.upper, self.lower}
        return [c for c in self.scenario.folds.components if ids & set(c.pair)]

    def swapped(self) -> "DifferenceField":
        return DifferenceField(self.scenario, self.lower, self.upper)

    def key(self) -> tuple:
        return (self.upper, self.lower)


_INF = float("inf")


@dataclass(frozen=True)
class Scenario:
    chart: Chart
    sheets: tuple[Sheet, ...]
    folds: FoldLocus
    name: str = ""

    def sheet(self, sheet_id) -> Sheet:
        for s in self.sheets:
            if s.id == sheet_id:
                return s
        raise ScenarioError(f"no sheet with id {sheet_id!r}")

    def difference(self, i, j) -> DifferenceField:
        f = DifferenceField(self, i, j)
        si = self.sheet(i)
        sj = self.sheet(j)
        if si.is_cusp and sj.is_cusp and si.sign != sj.sign and si.axis == sj.axis:
            # opposite-facing cusps: domains may still overlap between folds
            lo = min(si.offset, sj.offset)
            hi = max(si.offset, sj.offset)
            if hi <= lo:
                raise ScenarioError(f"sheets {i}, {j} have empty common domain")
        return f

    def fold_distance(self, x) -> tuple[float, FoldComponent | None]:
        best = (_INF, None)
        for c in self.folds.components:
            d = abs(c.signed_offset(x, self.chart))
            if d < best[0]:
                best = (d, c)
        return best


def _build_sheet(entry: dict, chart: Chart) -> Sheet:
    kind = entry.get("kind")
    sid = entry.get("id")
    if sid is None:
        raise ScenarioError("sheet entry missing 'id'")
    if kind == "smooth":
        text = entry.get("expr")
        if not isinstance(text, str):
            raise ScenarioError(f"smooth sheet {sid!r} missing 'expr' string")
        try:
            expr = parse_expression(text, chart.dim)
            compiled = compile_scalar_field(expr, chart.dim)
        except ExpressionError as exc:
            raise ScenarioError(f"sheet {sid!r}: {exc}") from exc
        return Sheet(id=sid, kind="smooth", chart=chart, expr_text=text, _compiled=compiled)
    if kind in ("cusp_upper", "cusp_lower"):
        axis = int(entry.get("axis", 1)) - 1
        if not 0 <= axis < chart.dim:
            raise ScenarioError(f"sheet {sid!r}: fold axis out of range")
        a = tuple(float(v) for v in entry.get("a", []))
        if len(a) != chart.dim - 1:
            raise ScenarioError(
                f"sheet {sid!r}: 'a' must have length {chart.dim - 1}, got {len(a)}"
            )
        sign = int(entry.get("sign", 1))
        if sign not in (1, -1):
            raise ScenarioError(f"sheet {sid!r}: sign must be +1 or -1")
        return Sheet(
            id=sid,
            kind=kind,
            chart=chart,
            axis=axis,
            offset=float(entry.get("offset", 0.0)),
            sign=sign,
            b=float(entry.get("b", 0.0)),
            a=a,
        )
    raise ScenarioError(f"sheet {sid!r}: unknown kind {kind!r}")


def _derive_folds(sheets: tuple[Sheet, ...]) -> FoldLocus:
    uppers = {}
    lowers = {}
    for s in sheets:
        if s.kind == "cusp_upper":
            uppers.setdefault((s.axis, s.offset, s.sign), []).append(s)
        elif s.kind == "cusp_lower":
            lowers.setdefault((s.axis, s.offset, s.sign), []).append(s)
    if {k for k in uppers} != {k for k in lowers}:
        raise ScenarioError("cusp sheets do not form upper/lower pairs")
    comps = []
    for key in sorted(uppers):
        us, ls = uppers[key], lowers[key]
        if len(us) != 1 or len(ls) != 1:
            raise ScenarioError(f"multiple cusp sheets share fold {key}")
        up, lo = us[0], ls[0]
        if not (math.isclose(up.b, lo.b, abs_tol=0.0, rel_tol=0.0) and up.a == lo.a):
            raise ScenarioError(
                f"cusp pair ({up.id!r}, {lo.id!r}) has mismatched (b, a): "
                f"({up.b}, {list(up.a)}) vs ({lo.b}, {list(lo.a)})"
            )
        axis, offset, sign = key
        comps.append(
            FoldComponent(
                id=len(comps), axis=axis, offset=offset, sign=sign, pair=(up.id, lo.id)
            )
        )
    return FoldLocus(tuple(comps))


def loads_scenario(text: str, name: str = "") -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "chart" not in doc or "sheets" not in doc:
        raise ScenarioError("scenario document needs top-level 'chart' and 'sheets'")
    ch = doc["chart"]
    dim = int(ch.get("dim", 0))
    bounds = tuple((float(lo), float(hi)) for lo, hi in ch.get("bounds", []))
    periodic = tuple(bool(p) for p in ch.get("periodic", [False] * dim))
    chart = Chart(dim=dim, bounds=bounds, periodic=periodic)
    sheets = tuple(_build_sheet(e, chart) for e in doc["sheets"])
    if len({s.id for s in sheets}) != len(sheets):
        raise ScenarioError("duplicate sheet ids")
    folds = _derive_folds(sheets)
    return Scenario(chart=chart, sheets=sheets, folds=folds, name=name or doc.get("name", ""))


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    import os

    return loads_scenario(text, name=os.path.splitext(os.path.basename(str(path)))[0])


def dump_scenario(s: Scenario) -> str:
    """Round-trip emission including the derived fold components."""
    sheets = []
    for sh in s.sheets:
        if sh.kind == "smooth":
            sheets.append({"id": sh.id, "kind": "smooth", "expr": sh.expr_text})
        else:
            sheets.append(
                {
                    "id": sh.id,
                    "kind": sh.kind,
                    "axis": sh.axis + 1,
                    "offset": sh.offset,
                    "sign": sh.sign,
                    "b": sh.b,
                    "a": list(sh.a),
                }
            )
    doc = {
        "name": s.name,
        "chart": {
            "dim": s.chart.dim,
            "bounds": [list(b) for b in s.chart.bounds],
            "periodic": list(s.chart.periodic),
        },
        "sheets": sheets,
        "folds": [
            {
                "id": c.id,
                "axis": c.axis + 1,
                "offset": c.offset,
                "sign": c.sign,
                "pair": list(c.pair),
            }
            for c in s.folds.components
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"
