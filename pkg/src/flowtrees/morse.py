"""Critical points of sheet-difference fields and their model neighborhoods.

A neighborhood V(eps, eta) around a critical point c is described in the
orthonormal Hessian eigenframe. With normalized coordinates

    y_k = sqrt(|lambda_k| / 2) * <e_k, x - c>

the quadratic model is Q(x) = sum_k sign(lambda_k) y_k^2 and

    V(eps, eta) = { -eps < Q < eps  and  |y-|^2 |y+|^2 <= eta (eps + eta) }

where y- and y+ collect the negative- and positive-eigenvalue coordinates.
The boundary splits into the entry level {Q = +eps, |y-|^2 <= eta}, the
exit level {Q = -eps, |y+|^2 <= eta} and the lateral part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .scenario import Chart, DifferenceField

__all__ = [
    "NonMorseError",
    "TooLargeError",
    "CriticalPoint",
    "MorseNeighborhood",
    "find_critical_points",
    "critical_points",
    "build_neighborhood",
    "default_neighborhoods",
    "classify_boundary",
    "sphere_samples",
]

DEGENERACY_THRESHOLD = 1e-6
FOLD_EXCLUSION = 1e-3


class NonMorseError(ValueError):
    """A converged critical point has a near-degenerate Hessian."""


class TooLargeError(ValueError):
    """Requested Morse neighborhood violates a containment invariant."""


@dataclass(frozen=True)
class CriticalPoint:
    location: tuple[float, ...]
    index: int
    eigenvalues: tuple[float, ...]
    eigenvectors: tuple[tuple[float, ...], ...]  # rows, matching eigenvalues
    value: float
    field: DifferenceField = dc_field(compare=False, default=None)

    @property
    def min_abs_eigenvalue(self) -> float:
        return min(abs(v) for v in self.eigenvalues)

    def distance(self, x) -> float:
        return self.field.chart.distance(self.location, x)

    def key(self) -> tuple:
        return tuple(round(v, 9) for v in self.location)


def _newton_refine(F: DifferenceField, x0, max_iter: int = 80):
    """Damped Newton on grad F. Runs to step stagnation, not just tolerance,
    so degenerate points crawl all the way in and get caught by the
    Hessian check instead of stopping at a misleading offset."""
    chart = F.chart
    n = chart.dim
    x = list(map(float, x0))
    scale = max(chart.width(k) for k in range(n))
    for _ in range(max_iter):
        try:
            g = F.grad(x, clamp=True)
            h = F.hess(x, clamp=True)
        except Exception:
            return None
        gn = math.sqrt(sum(v * v for v in g))
        try:
            d = np.linalg.solve(np.array(h), -np.array(g))
        except np.linalg.LinAlgError:
            return None
        dn = math.sqrt(float(d @ d))
        if dn > 0.25 * scale:
            d = d * (0.25 * scale / dn)
            dn = 0.25 * scale
        # backtrack until the gradient norm does not increase
        lam = 1.0
        for _ in range(25):
            xt = [x[k] + lam * float(d[k]) for k in range(n)]
            try:
                gt = F.grad(xt, clamp=True)
            except Exception:
                lam *= 0.5
                continue
            gtn = math.sqrt(sum(v * v for v in gt))
            if gtn <= gn * (1.0 - 1e-4 * lam) or gtn < 1e-14:
                break
            lam *= 0.5
        else:
            return x
        x = xt
        if lam * dn < 1e-14 * max(1.0, scale):
            return x
    return x


def find_critical_points(
    F: DifferenceField, seeds: int = 24, tol: float = 1e-10
) -> list[CriticalPoint]:
    """Grid-seeded damped Newton search, deduplicated and classified.

    Raises NonMorseError when a surviving point has an eigenvalue of the
    analytic Hessian below the degeneracy threshold.
    """
    chart = F.chart
    n = chart.dim
    axes = []
    for k in range(n):
        lo, hi = chart.bounds[k]
        if chart.periodic[k]:
            pts = [lo + (hi - lo) * (i + 0.5) / seeds for i in range(seeds)]
        else:
            pts = [lo + (hi - lo) * i / (seeds - 1) for i in range(seeds)]
        axes.append(pts)
    if n == 1:
        grid = [[a] for a in axes[0]]
    else:
        grid = [[a, b] for a in axes[0] for b in axes[1]]

    found: list[list[float]] = []
    dedup = 10.0 * tol
    for seed in grid:
        if not F.in_domain(seed, slack=0.0):
            continue
        x = _newton_refine(F, seed)
        if x is None:
            continue
        x = chart.wrap(x)
        if not chart.contains(x):
            continue
        if not F.in_domain(x, slack=1e-12):
            continue
        try:
            g = F.grad(x, clamp=True)
        except Exception:
            continue
        if math.sqrt(sum(v * v for v in g)) > tol:
            continue
        d, _ = F.scenario.fold_distance(x)
        if d < FOLD_EXCLUSION:
            continue
        if any(chart.distance(x, y) <= max(dedup, 1e-9) for y in found):
            continue
        found.append(x)

    found.sort(key=lambda p: tuple(round(v, 9) for v in p))
    out = []
    for x in found:
        h = np.array(F.hess(x))
        h = 0.5 * (h + h.T)
        w, v = np.linalg.eigh(h)
        if min(abs(float(e)) for e in w) < DEGENERACY_THRESHOLD:
            raise NonMorseError(
                f"critical point at {tuple(x)} has near-degenerate Hessian "
                f"(eigenvalues {list(map(float, w))})"
            )
        out.append(
            CriticalPoint(
                location=tuple(x),
                index=int(sum(1 for e in w if e < 0)),
                eigenvalues=tuple(float(e) for e in w),
                eigenvectors=tuple(tuple(float(c) for c in v[:, k]) for k in range(n)),
                value=F.value(x),
                field=F,
            )
        )
    return out


_CP_CACHE: dict = {}


def critical_points(F: DifferenceField, seeds: int = 24, tol: float = 1e-10):
    """Cached find_critical_points; scenarios are immutable so this is safe."""
    key = (id(F.scenario), F.key(), seeds, tol)
    if key not in _CP_CACHE:
        _CP_CACHE[key] = find_critical_points(F, seeds, tol)
    return _CP_CACHE[key]


@dataclass(frozen=True)
class MorseNeighborhood:
    center: CriticalPoint
    epsilon: float
    eta: float

    @property
    def chart(self) -> Chart:
        return self.center.field.chart

    def coords(self, x) -> tuple[list[float], float, float, float]:
        """Returns (y, |y-|^2, |y+|^2, Q) in normalized frame coordinates."""
        c = self.center
        disp = self.chart.displacement(c.location, x)
        y = []
        m2 = p2 = 0.0
        for lam, vec in zip(c.eigenvalues, c.eigenvectors):
            yk = math.sqrt(abs(lam) / 2.0) * sum(v * d for v, d in zip(vec, disp))
            y.append(yk)
            if lam < 0:
                m2 += yk * yk
            else:
                p2 += yk * yk
        return y, m2, p2, p2 - m2

    def member(self, x) -> bool:
        _, m2, p2, q = self.coords(x)
        return -self.epsilon < q < self.epsilon and m2 * p2 <= self.eta * (
            self.epsilon + self.eta
        )

    def from_coords(self, y) -> list[float]:
        c = self.center
        n = self.chart.dim
        x = list(c.location)
        for yk, lam, vec in zip(y, c.eigenvalues, c.eigenvectors):
            f = yk / math.sqrt(abs(lam) / 2.0)
            for k in range(n):
                x[k] += f * vec[k]
        return self.chart.wrap(x)

    @property
    def bounding_radius(self) -> float:
        """Chart-distance radius of a ball around c guaranteed to contain V."""
        return 2.0 * math.sqrt(
            (self.epsilon + self.eta) / self.center.min_abs_eigenvalue
        )


def build_neighborhood(
    c: CriticalPoint, epsilon: float, eta: float
) -> MorseNeighborhood:
    if epsilon <= 0 or eta <= 0:
        raise TooLargeError("epsilon and eta must be positive")
    nbhd = MorseNeighborhood(center=c, epsilon=epsilon, eta=eta)
    r = nbhd.bounding_radius
    chart = c.field.chart
    for k in range(chart.dim):
        if chart.periodic[k]:
            if 2.0 * r >= chart.width(k):
                raise TooLargeError(
                    f"neighborhood radius {r:g} wraps around periodic axis {k + 1}"
                )
            continue
        lo, hi = chart.bounds[k]
        if c.location[k] - r < lo or c.location[k] + r > hi:
            raise TooLargeError(
                f"neighborhood radius {r:g} crosses chart boundary on axis {k + 1}"
            )
    d, comp = c.field.scenario.fold_distance(c.location)
    if comp is not None and d <= r:
        raise TooLargeError(
            f"neighborhood radius {r:g} reaches fold component {comp.id} "
            f"(distance {d:g})"
        )
    return nbhd


def classify_boundary(n: MorseNeighborhood, p, tol: float = 1e-7) -> str:
    """One of 'PlusLevel', 'MinusLevel', 'Lateral', 'NotBoundary'."""
    _, m2, p2, q = n.coords(p)
    eps, eta = n.epsilon, n.eta
    if abs(q - eps) <= tol and m2 <= eta + tol:
        return "PlusLevel"
    if abs(q + eps) <= tol and p2 <= eta + tol:
        return "MinusLevel"
    if abs(m2 * p2 - eta * (eps + eta)) <= tol and -eps - tol <= q <= eps + tol:
        return "Lateral"
    return "NotBoundary"


def sphere_samples(
    c: CriticalPoint, n: MorseNeighborhood, which: str, k: int
) -> list[list[float]]:
    """Sample the stable or unstable sphere on the neighborhood boundary.

    The stable sphere {y- = 0, Q = +eps} has dimension dim - index - 1, the
    unstable one {y+ = 0, Q = -eps} has dimension index - 1. Empty spheres
    (dimension -1) give the empty list. Sampling is deterministic.
    """
    if which not in ("Stable", "Unstable"):
        raise ValueError(f"which must be 'Stable' or 'Unstable', got {which!r}")
    dim = c.field.chart.dim
    if which == "Stable":
        sub = [i for i, lam in enumerate(c.eigenvalues) if lam > 0]
        radius = math.sqrt(n.epsilon)
    else:
        sub = [i for i, lam in enumerate(c.eigenvalues) if lam < 0]
        radius = math.sqrt(n.epsilon)
    if not sub:
        return []
    out = []
    if len(sub) == 1:
        dirs = [[1.0 if i % 2 == 0 else -1.0] for i in range(max(k, 0))]
    else:
        dirs = [
            [math.cos(2.0 * math.pi * i / k), math.sin(2.0 * math.pi * i / k)]
            for i in range(k)
        ]
    for d in dirs:
        y = [0.0] * dim
        for comp, idx in zip(d, sub):
            y[idx] = radius * comp
        out.append(n.from_coords(y))
    return out


_NBHD_CACHE: dict = {}


def default_neighborhoods(
    F: DifferenceField, cps: list[CriticalPoint] | None = None, eps_scale: float = 0.05
) -> dict[tuple, MorseNeighborhood]:
    """One neighborhood per critical point, shrunk by halving until each
    fits the chart and folds and the family is pairwise disjoint."""
    key = (id(F.scenario), F.key(), eps_scale)
    if cps is None and key in _NBHD_CACHE:
        return _NBHD_CACHE[key]
    if cps is None:
        cps = critical_points(F)
    nbhds = {}
    for c in cps:
        eps = eps_scale * c.min_abs_eigenvalue
        last_err = None
        for _ in range(40):
            try:
                nbhds[c.key()] = build_neighborhood(c, eps, eps / 5.0)
                break
            except TooLargeError as exc:
                last_err = exc
                eps *= 0.5
        else:
            raise TooLargeError(f"cannot fit neighborhood at {c.location}: {last_err}")
    # shrink everything until the balls are pairwise disjoint
    keys = list(nbhds)
    for _ in range(40):
        clash = False
        for i in range(len(keys)):
            for j in range(i + 1, len(keys)):
                a, b = nbhds[keys[i]], nbhds[keys[j]]
                sep = F.chart.distance(a.center.location, b.center.location)
                if a.bounding_radius + b.bounding_radius >= sep:
                    clash = True
        if not clash:
            break
        for kk in keys:
            old = nbhds[kk]
            nbhds[kk] = MorseNeighborhood(
                center=old.center, epsilon=old.epsilon * 0.5, eta=old.eta * 0.5
            )
    if cps is critical_points(F):
        _NBHD_CACHE[key] = nbhds
    return nbhds
