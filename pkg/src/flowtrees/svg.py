"""Minimal static SVG emission for chart scenes.

Draws the base chart with fold lines dashed, critical points as
index-labeled markers and flows as polylines. 1d charts are drawn on a
horizontal axis band. No external plotting dependency; output is plain
SVG 1.1 text.
"""

from __future__ import annotations

from .scenario import Chart

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"]


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class SceneWriter:
    def __init__(self, chart: Chart, width: int = 480, margin: int = 36):
        self.chart = chart
        self.width = width
        self.margin = margin
        (x0, x1) = chart.bounds[0]
        if chart.dim == 2:
            (y0, y1) = chart.bounds[1]
        else:
            y0, y1 = -0.5, 0.5
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        span_x = x1 - x0
        span_y = y1 - y0
        self.scale = (width - 2 * margin) / span_x
        self.height = int(2 * margin + span_y * self.scale)
        self.body: list[str] = []

    def to_px(self, p) -> tuple[float, float]:
        x = p[0]
        y = p[1] if self.chart.dim == 2 else 0.0
        px = self.margin + (x - self.x0) * self.scale
        py = self.height - self.margin - (y - self.y0) * self.scale
        return px, py

    def add_frame(self):
        x0, y0 = self.to_px((self.x0, self.y1))
        w = (self.x1 - self.x0) * self.scale
        h = (self.y1 - self.y0) * self.scale
        self.body.append(
            f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" fill="none" stroke="#444" stroke-width="1"/>'
        )

    def add_fold(self, axis: int, offset: float):
        if self.chart.dim == 1 or axis == 0:
            a = self.to_px((offset, self.y0))
            b = self.to_px((offset, self.y1))
        else:
            a = self.to_px((self.x0, offset))
            b = self.to_px((self.x1, offset))
        self.body.append(
            f'<line x1="{_fmt(a[0])}" y1="{_fmt(a[1])}" x2="{_fmt(b[0])}" '
            f'y2="{_fmt(b[1])}" stroke="#b30000" stroke-width="1.5" '
            'stroke-dasharray="6 4"/>'
        )

    def add_critical_point(self, location, index: int):
        px, py = self.to_px(location)
        self.body.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="4" fill="#000"/>'
        )
        self.body.append(
            f'<text x="{_fmt(px + 6)}" y="{_fmt(py - 6)}" font-size="11" '
            f'font-family="monospace">{index}</text>'
        )

    def add_polyline(self, points, color: str | None = None, dashed: bool = False):
        if len(points) < 2:
            return
        color = color or _PALETTE[0]
        coords = " ".join(
            f"{_fmt(px)},{_fmt(py)}" for px, py in (self.to_px(p) for p in points)
        )
        dash = ' stroke-dasharray="2 3"' if dashed else ""
        self.body.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"{dash}/>'
        )

    def add_marker(self, location, color: str = "#2ca02c"):
        px, py = self.to_px(location)
        self.body.append(
            f'<rect x="{_fmt(px - 3)}" y="{_fmt(py - 3)}" width="6" height="6" '
            f'fill="{color}"/>'
        )

    def render(self) -> str:
        head = (
            '<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">'
        )
        return "\n".join([head, *self.body, "</svg>"]) + "\n"


def scenario_scene(scenario, pair=None, flows=(), width: int = 480) -> str:
    """Standard scene: chart frame, folds dashed, critical points of the
    given pair labeled, flows as polylines split at periodic seams."""
    w = SceneWriter(scenario.chart, width=width)
    w.add_frame()
    for comp in scenario.folds.components:
        w.add_fold(comp.axis, comp.offset)
    if pair is not None:
        from .morse import critical_points

        F = scenario.difference(*pair)
        for c in critical_points(F):
            w.add_critical_point(c.location, c.index)
    chart = scenario.chart
    for k, fl in enumerate(flows):
        color = _PALETTE[k % len(_PALETTE)]
        run: list = []
        prev = None
        for p in fl.points:
            q = chart.wrap(p)
            if prev is not None and chart.distance(prev, q) * 4 < max(
                abs(a - b)
                for a, b in zip(prev, q)
            ):
                # crossed a periodic seam: break the polyline
                w.add_polyline(run, color)
                run = []
            run.append(q)
            prev = q
        w.add_polyline(run, color)
    return w.render()
