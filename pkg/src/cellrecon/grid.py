"""Cell-average grids on the unit square.

Data model for N x N cell-average arrays, the synthetic test-function
catalog used throughout the test suite, and the primitive/aggregation
round-trip utilities.

Indexing convention (used everywhere in this package): cell (i, j) with
1-based i along x and j along y covers [(i-1)h, ih] x [(j-1)h, jh] and has
center ((i-1/2)h, (j-1/2)h).  Arrays store cell (i, j) at [i-1, j-1].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger("cellrecon.grid")

_GAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, 1]."""
    if order not in _GAUSS_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        _GAUSS_CACHE[order] = (0.5 * (x + 1.0), 0.5 * w)
    return _GAUSS_CACHE[order]


def fmt17(v: float) -> str:
    """Fixed 17-significant-digit representation used in all file outputs."""
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# Singularity-curve descriptions for the test catalog
# ---------------------------------------------------------------------------


class CircleCurve:
    """Circle or circular arc (x-cx)^2 + (y-cy)^2 = r^2."""

    def __init__(self, cx: float, cy: float, r: float, closed: bool = True,
                 theta0: float = 0.0, theta1: float = 2.0 * math.pi):
        self.cx, self.cy, self.r = float(cx), float(cy), float(r)
        self.closed = closed
        self.theta0, self.theta1 = float(theta0), float(theta1)

    def sample(self, m: int) -> np.ndarray:
        th = np.linspace(self.theta0, self.theta1, m)
        return np.column_stack((self.cx + self.r * np.cos(th),
                                self.cy + self.r * np.sin(th)))

    def distance(self, pts: np.ndarray) -> np.ndarray:
        # Points inside [0,1]^2 always project onto the in-domain arc for the
        # catalog curves, so the radial distance is exact.
        pts = np.atleast_2d(pts)
        rho = np.hypot(pts[:, 0] - self.cx, pts[:, 1] - self.cy)
        return np.abs(rho - self.r)

    def closest_point(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        dx = pts[:, 0] - self.cx
        dy = pts[:, 1] - self.cy
        rho = np.hypot(dx, dy)
        rho = np.where(rho == 0.0, 1.0, rho)
        return np.column_stack((self.cx + self.r * dx / rho,
                                self.cy + self.r * dy / rho))

    def box_distance(self, x0: float, x1: float, y0: float, y1: float) -> float:
        # Radial interval swept by the box.
        px = min(max(self.cx, x0), x1)
        py = min(max(self.cy, y0), y1)
        rho_min = math.hypot(px - self.cx, py - self.cy)
        corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
        rho_max = max(math.hypot(x - self.cx, y - self.cy) for x, y in corners)
        if rho_min <= self.r <= rho_max:
            return 0.0
        if rho_min > self.r:
            return rho_min - self.r
        return self.r - rho_max

    def box_crossed(self, x0: float, x1: float, y0: float, y1: float) -> bool:
        return self.box_distance(x0, x1, y0, y1) == 0.0


class VerticalLineCurve:
    """Line x = x0 crossing the whole unit square."""

    closed = False

    def __init__(self, x0: float):
        self.x0 = float(x0)

    def sample(self, m: int) -> np.ndarray:
        ys = np.linspace(0.0, 1.0, m)
        return np.column_stack((np.full(m, self.x0), ys))

    def distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.abs(pts[:, 0] - self.x0)

    def closest_point(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.column_stack((np.full(len(pts), self.x0), pts[:, 1]))

    def box_distance(self, x0: float, x1: float, y0: float, y1: float) -> float:
        if x0 < self.x0 < x1:
            return 0.0
        return min(abs(x0 - self.x0), abs(x1 - self.x0))

    def box_crossed(self, x0, x1, y0, y1) -> bool:
        return x0 < self.x0 < x1


class QuadraticCurve:
    """Parabolic graph y = a2*x^2 + a1*x + a0 over x in [0, 1]."""

    closed = False

    def __init__(self, a2: float, a1: float, a0: float):
        self.a2, self.a1, self.a0 = float(a2), float(a1), float(a0)
        self._dense: np.ndarray | None = None

    def q(self, x):
        return (self.a2 * x + self.a1) * x + self.a0

    def sample(self, m: int) -> np.ndarray:
        xs = np.linspace(0.0, 1.0, m)
        return np.column_stack((xs, self.q(xs)))

    def _dense_samples(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.sample(20001)
        return self._dense

    def distance(self, pts: np.ndarray) -> np.ndarray:
        from scipy.spatial import cKDTree

        pts = np.atleast_2d(pts)
        poly = self._dense_samples()
        tree = getattr(self, "_tree", None)
        if tree is None:
            tree = cKDTree(poly)
            self._tree = tree
        dd, ii = tree.query(pts, k=2)
        # refine with exact point-to-segment around the nearest samples
        best = dd[:, 0].copy()
        for off in (-1, 0):
            a_idx = np.clip(ii[:, 0] + off, 0, len(poly) - 2)
            a = poly[a_idx]
            b = poly[a_idx + 1]
            ab = b - a
            tpar = np.einsum("ij,ij->i", pts - a, ab) / np.einsum("ij,ij->i", ab, ab)
            tpar = np.clip(tpar, 0.0, 1.0)
            proj = a + tpar[:, None] * ab
            best = np.minimum(best, np.hypot(*(pts - proj).T))
        return best

    def closest_point(self, pts: np.ndarray) -> np.ndarray:
        from scipy.spatial import cKDTree

        pts = np.atleast_2d(pts)
        poly = self._dense_samples()
        tree = getattr(self, "_tree", None)
        if tree is None:
            tree = cKDTree(poly)
            self._tree = tree
        _, ii = tree.query(pts)
        return poly[ii]

    def _range_on(self, x0: float, x1: float) -> tuple[float, float]:
        vals = [self.q(x0), self.q(x1)]
        if self.a2 != 0.0:
            xv = -self.a1 / (2.0 * self.a2)
            if x0 < xv < x1:
                vals.append(self.q(xv))
        return min(vals), max(vals)

    def box_crossed(self, x0, x1, y0, y1) -> bool:
        qmin, qmax = self._range_on(x0, x1)
        return (y0 - qmax) < 0.0 < (y1 - qmin)

    def box_distance(self, x0, x1, y0, y1) -> float:
        if self.box_crossed(x0, x1, y0, y1):
            return 0.0
        pts = self._dense_samples()
        dx = np.maximum(np.maximum(x0 - pts[:, 0], pts[:, 0] - x1), 0.0)
        dy = np.maximum(np.maximum(y0 - pts[:, 1], pts[:, 1] - y1), 0.0)
        return float(np.min(np.hypot(dx, dy)))


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """A piecewise-smooth catalog function with a known separating curve.

    piece1 applies where ``indicator`` is True.  ``delta`` is the minimal
    jump |piece1 - piece2| along the curve, ``m_bound`` bounds
    |f_xx| + |f_yy| on either piece, ``lipschitz`` bounds the gradient norm.
    """

    kind: str
    piece1: Callable
    piece2: Callable
    indicator: Callable
    curve: object | None
    delta: float
    m_bound: float
    lipschitz: float

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.where(self.indicator(x, y), self.piece1(x, y), self.piece2(x, y))


def _quarter_circle_delta() -> float:
    r = math.sqrt(0.5)
    th = np.linspace(0.0, math.pi / 2.0, 200001)
    x = r * np.cos(th)
    y = r * np.sin(th)
    jump = np.abs((1.0 + 0.5 * np.sin(3.0 * y)) - (x + y))
    return float(np.min(jump))


def catalog(kind: str) -> TestFunction:
    """Catalog entry by name: open-quarter-circle, closed-circle, step, smooth."""
    if kind == "open-quarter-circle":
        return TestFunction(
            kind=kind,
            piece1=lambda x, y: x + y,
            piece2=lambda x, y: 1.0 + 0.5 * np.sin(3.0 * y),
            indicator=lambda x, y: x * x + y * y < 0.5,
            curve=CircleCurve(0.0, 0.0, math.sqrt(0.5), closed=False,
                              theta0=0.0, theta1=math.pi / 2.0),
            delta=_quarter_circle_delta(),
            m_bound=4.5,
            lipschitz=1.5,
        )
    if kind == "closed-circle":
        return TestFunction(
            kind=kind,
            piece1=lambda x, y: np.ones_like(np.asarray(x, dtype=float)),
            piece2=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
            indicator=lambda x, y: (x - 0.5) ** 2 + (y - 0.5) ** 2 < 0.1,
            curve=CircleCurve(0.5, 0.5, math.sqrt(0.1), closed=True),
            delta=1.0,
            m_bound=0.0,
            lipschitz=0.0,
        )
    if kind == "step":
        return TestFunction(
            kind=kind,
            piece1=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
            piece2=lambda x, y: np.ones_like(np.asarray(x, dtype=float)),
            indicator=lambda x, y: x < 0.5,
            curve=VerticalLineCurve(0.5),
            delta=1.0,
            m_bound=0.0,
            lipschitz=0.0,
        )
    if kind == "smooth":
        f = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
        return TestFunction(
            kind=kind, piece1=f, piece2=f,
            indicator=lambda x, y: np.ones(np.broadcast(x, y).shape, dtype=bool),
            curve=None, delta=0.0,
            m_bound=2.0 * math.pi ** 2,
            lipschitz=math.pi,
        )
    raise ValueError(f"unknown test-function kind: {kind!r}")


CATALOG_KINDS = ("open-quarter-circle", "closed-circle", "step", "smooth")


def make_step(x0: float, low: float = 0.0, high: float = 1.0) -> TestFunction:
    """Custom vertical step at x = x0."""
    return TestFunction(
        kind="custom",
        piece1=lambda x, y: np.full(np.broadcast(x, y).shape, low, dtype=float),
        piece2=lambda x, y: np.full(np.broadcast(x, y).shape, high, dtype=float),
        indicator=lambda x, y: x < x0,
        curve=VerticalLineCurve(x0),
        delta=abs(high - low),
        m_bound=0.0,
        lipschitz=0.0,
    )


def make_quadratic_edge(l1: tuple[float, float, float],
                        l2: tuple[float, float, float],
                        q: tuple[float, float, float]) -> TestFunction:
    """Piecewise-linear function split by y = q2*x^2 + q1*x + q0.

    piece1 = l1 below the parabola, piece2 = l2 above.
    """
    a1, b1, c1 = l1
    a2, b2, c2 = l2
    curve = QuadraticCurve(*q)
    pts = curve.sample(4097)
    jump = np.abs((a1 - a2) * pts[:, 0] + (b1 - b2) * pts[:, 1] + (c1 - c2))
    return TestFunction(
        kind="custom",
        piece1=lambda x, y: a1 * x + b1 * y + c1,
        piece2=lambda x, y: a2 * x + b2 * y + c2,
        indicator=lambda x, y: y < curve.q(x),
        curve=curve,
        delta=float(np.min(jump)),
        m_bound=0.0,
        lipschitz=max(math.hypot(a1, b1), math.hypot(a2, b2)),
    )


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellGrid:
    """N x N cell averages with geometry h = 1/n."""

    n: int
    h: float
    values: np.ndarray
    quad_warnings: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if abs(self.h * self.n - 1.0) > 1e-15:
            raise ValueError("h*n must equal 1")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.n, self.n):
            raise ValueError("values must be n x n")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        c = (np.arange(self.n) + 0.5) * self.h
        return c, c


@dataclass(frozen=True)
class AggregateGrid:
    """Point values F of the 2-D primitive on the (n+1)^2 cell-corner lattice."""

    n: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.n + 1, self.n + 1):
            raise ValueError("values must be (n+1) x (n+1)")
        if v[0, 0] != 0.0 or np.any(v[0, :] != 0.0) or np.any(v[:, 0] != 0.0):
            raise ValueError("first row/column of F must vanish")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass
class ExtendedGrid:
    """Cell averages on an index range extended by ``ext`` cells per side.

    ``values[i-1+ext, j-1+ext]`` holds cell (i, j); indices may run from
    1-ext to n+ext.  ``known`` flags the entries that carry data (original
    or extrapolated); ``provenance`` records how each fill was produced.
    """

    n: int
    h: float
    ext: int
    values: np.ndarray
    known: np.ndarray
    provenance: dict = field(default_factory=dict)

    @classmethod
    def from_grid(cls, g: CellGrid, ext: int) -> "ExtendedGrid":
        size = g.n + 2 * ext
        values = np.zeros((size, size))
        known = np.zeros((size, size), dtype=bool)
        values[ext:ext + g.n, ext:ext + g.n] = g.values
        known[ext:ext + g.n, ext:ext + g.n] = True
        return cls(g.n, g.h, ext, values, known)

    def idx(self, i: int, j: int) -> tuple[int, int]:
        return i - 1 + self.ext, j - 1 + self.ext


# ---------------------------------------------------------------------------
# Exact integration helpers (piecewise-linear with quadratic edge)
# ---------------------------------------------------------------------------


def _poly_int(coeffs: np.ndarray, x0: float, x1: float) -> float:
    """Exact integral over [x0, x1] of a polynomial (ascending coeffs)."""
    p = np.polynomial.polynomial.polyint(coeffs)
    return float(np.polynomial.polynomial.polyval(x1, p)
                 - np.polynomial.polynomial.polyval(x0, p))


def integral_below_quadratic(lin: tuple[float, float, float],
                             q: tuple[float, float, float],
                             x0: float, x1: float,
                             y0: float, y1: float) -> float:
    """Exact integral of a*x + b*y + c over the part of a box below y = q(x).

    q is (q2, q1, q0); the vertical extent of the region is clamped to
    [y0, y1].  Used both as the synthetic quadratic-edge discretizer and as
    the closed-form reference for the local edge model.
    """
    a, b, c = lin
    q2, q1, q0 = q

    # split [x0, x1] where q crosses y0 or y1
    cuts = {x0, x1}
    for level in (y0, y1):
        if q2 == 0.0:
            if q1 != 0.0:
                r = (level - q0) / q1
                if x0 < r < x1:
                    cuts.add(r)
        else:
            disc = q1 * q1 - 4.0 * q2 * (q0 - level)
            if disc >= 0.0:
                sq = math.sqrt(disc)
                for r in ((-q1 - sq) / (2.0 * q2), (-q1 + sq) / (2.0 * q2)):
                    if x0 < r < x1:
                        cuts.add(r)
    xs = sorted(cuts)

    total = 0.0
    for lo, hi in zip(xs[:-1], xs[1:]):
        xm = 0.5 * (lo + hi)
        qm = (q2 * xm + q1) * xm + q0
        if qm <= y0:
            continue
        if qm >= y1:
            # full box strip: integral of a*x + b*y + c over [lo,hi]x[y0,y1]
            total += _poly_int(np.array([c * (y1 - y0) + 0.5 * b * (y1 * y1 - y0 * y0),
                                         a * (y1 - y0)]), lo, hi)
        else:
            # upper boundary is q(x):
            #   (a*x + c)(q(x) - y0) + (b/2)(q(x)^2 - y0^2)
            def pad5(p):
                return np.pad(np.asarray(p, dtype=float), (0, 5 - len(p)))

            qq = np.array([q0, q1, q2])
            qq2 = pad5(np.polynomial.polynomial.polymul(qq, qq))
            part1 = pad5(np.polynomial.polynomial.polymul(
                np.array([c, a]), qq - np.array([y0, 0.0, 0.0])))
            part2 = 0.5 * b * (qq2 - np.array([y0 * y0, 0, 0, 0, 0]))
            total += _poly_int(part1 + part2, lo, hi)
    return total


def quadratic_edge_grid(l1: tuple[float, float, float],
                        l2: tuple[float, float, float],
                        q: tuple[float, float, float],
                        n: int) -> CellGrid:
    """Exact cell averages of a piecewise-linear function with parabolic edge.

    piece l1 applies below y = q(x), l2 above; all integrals are closed-form,
    so the averages are exact to rounding.
    """
    h = 1.0 / n
    a2, b2, c2 = l2
    vals = np.empty((n, n))
    for i in range(1, n + 1):
        x0, x1 = (i - 1) * h, i * h
        for j in range(1, n + 1):
            y0, y1 = (j - 1) * h, j * h
            # start from the l2 average, add the below-curve correction
            avg2 = a2 * (x0 + x1) / 2.0 + b2 * (y0 + y1) / 2.0 + c2
            dif = (l1[0] - l2[0], l1[1] - l2[1], l1[2] - l2[2])
            corr = integral_below_quadratic(dif, q, x0, x1, y0, y1)
            vals[i - 1, j - 1] = avg2 + corr / (h * h)
    return CellGrid(n, h, vals)


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------


def _gauss_cell_average(f: Callable, x0, x1, y0, y1, order: int) -> float:
    gx, gw = gauss_rule(order)
    xs = x0 + (x1 - x0) * gx
    ys = y0 + (y1 - y0) * gx
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = f(X, Y)
    return float(gw @ vals @ gw)


def _bisect_indicator(ind, x, ylo, yhi, iters: int = 60):
    """Per-column bisection of the indicator transition along y."""
    lo = np.full_like(x, ylo)
    hi = np.full_like(x, yhi)
    s_lo = ind(x, lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        s_mid = ind(x, mid)
        take_lo = s_mid == s_lo
        lo = np.where(take_lo, mid, lo)
        hi = np.where(take_lo, hi, mid)
    return 0.5 * (lo + hi)


def _edge_breakpoints(ind_line, lo, hi, level, probes: int = 17) -> list[float]:
    """Crossing positions of the indicator along one cell edge."""
    ts = np.linspace(lo, hi, probes)
    side = ind_line(ts, np.full_like(ts, level))
    flips = np.nonzero(side[:-1] != side[1:])[0]
    out = []
    for k in flips:
        a, b = ts[k], ts[k + 1]
        sa = side[k]
        for _ in range(60):
            m = 0.5 * (a + b)
            if bool(np.asarray(ind_line(np.array([m]),
                                        np.array([level])))[0]) == bool(sa):
                a = m
            else:
                b = m
        out.append(0.5 * (a + b))
    return out


def _crossed_cell_average(f: TestFunction, x0, x1, y0, y1,
                          order: int, depth: int = 0):
    """Cell average over a box crossed by the curve.

    Slices along the axis on which the indicator changes at most once per
    line, splitting the outer integral where the curve crosses the two
    parallel edges so every slice family is smooth; falls back to
    quadrisection when the structure is not single-valued.  Returns
    (average*area, warning_count).
    """
    probe = np.linspace(0.0, 1.0, 9)
    px = x0 + (x1 - x0) * probe
    py = y0 + (y1 - y0) * probe
    PX, PY = np.meshgrid(px, py, indexing="ij")
    S = f.indicator(PX, PY)
    col_tr = np.abs(np.diff(S.astype(int), axis=1)).sum(axis=1).max()
    row_tr = np.abs(np.diff(S.astype(int), axis=0)).sum(axis=0).max()

    if col_tr <= 1 or row_tr <= 1:
        slice_y = col_tr <= 1  # integrate along y for each x node
        if slice_y:
            out_lo, out_hi = x0, x1
            in_lo, in_hi = y0, y1
        else:
            out_lo, out_hi = y0, y1
            in_lo, in_hi = x0, x1

        def ind_line(t, u):
            return f.indicator(t, u) if slice_y else f.indicator(u, t)

        def f_line(piece, t, u):
            return piece(t, u) if slice_y else piece(u, t)

        cuts = sorted({out_lo, out_hi}
                      | set(_edge_breakpoints(ind_line, out_lo, out_hi, in_lo))
                      | set(_edge_breakpoints(ind_line, out_lo, out_hi, in_hi)))
        gx, gw = gauss_rule(max(order, 10))
        g2, w2 = gauss_rule(max(order, 8))
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi - lo < 1e-15:
                continue
            xs = lo + (hi - lo) * gx
            lo_side = ind_line(xs, np.full_like(xs, in_lo))
            hi_side = ind_line(xs, np.full_like(xs, in_hi))
            crossing = lo_side != hi_side
            ystar = np.where(crossing,
                             _bisect_indicator(ind_line, xs, in_lo, in_hi),
                             in_hi)
            line_vals = np.zeros_like(xs)
            for part_lo, part_hi, use_lo_side in (
                    (np.full_like(xs, in_lo), ystar, True),
                    (ystar, np.full_like(xs, in_hi), False)):
                span = part_hi - part_lo
                U = part_lo[:, None] + span[:, None] * g2[None, :]
                T = np.broadcast_to(xs[:, None], U.shape)
                side = lo_side if use_lo_side else hi_side
                piece_vals = np.where(side[:, None],
                                      f_line(f.piece1, T, U),
                                      f_line(f.piece2, T, U))
                line_vals += span * (piece_vals @ w2)
            total += (hi - lo) * float(gw @ line_vals)
        return total, 0

    if depth >= 12:
        # give up on structure: midpoint classification on a 33x33 subgrid
        mx = x0 + (x1 - x0) * (np.arange(33) + 0.5) / 33.0
        my = y0 + (y1 - y0) * (np.arange(33) + 0.5) / 33.0
        MX, MY = np.meshgrid(mx, my, indexing="ij")
        vals = f.evaluate(MX, MY)
        return float(vals.mean()) * (x1 - x0) * (y1 - y0), 1

    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    total, warns = 0.0, 0
    for (a, b) in ((x0, xm), (xm, x1)):
        for (c, d) in ((y0, ym), (ym, y1)):
            if _box_crossed(f, a, b, c, d):
                s, w = _crossed_cell_average(f, a, b, c, d, order, depth + 1)
            else:
                mid_in = bool(np.asarray(f.indicator((a + b) / 2.0, (c + d) / 2.0)))
                piece = f.piece1 if mid_in else f.piece2
                s = _gauss_cell_average(piece, a, b, c, d, order) * (b - a) * (d - c)
                w = 0
            total += s
            warns += w
    return total, warns


def _box_crossed(f: TestFunction, x0, x1, y0, y1) -> bool:
    if f.curve is not None and hasattr(f.curve, "box_crossed"):
        return f.curve.box_crossed(x0, x1, y0, y1)
    px = np.linspace(x0, x1, 7)
    py = np.linspace(y0, y1, 7)
    PX, PY = np.meshgrid(px, py, indexing="ij")
    S = f.indicator(PX, PY)
    return bool(S.any() and not S.all())


def discretize(f: TestFunction, n: int, quad_order: int = 6) -> CellGrid:
    """Cell-average discretization of a catalog function.

    Uncrossed cells use tensor Gauss-Legendre of the given order; cells
    crossed by the curve are resolved by bisecting the indicator along
    quadrature lines (adaptive quadrisection when the local crossing
    structure is not single-valued).
    """
    if n < 4:
        raise ValueError("n must be >= 4")
    if quad_order < 2:
        raise ValueError("quad_order must be >= 2")
    h = 1.0 / n
    edges = np.arange(n + 1) * h
    gx, gw = gauss_rule(quad_order)

    if f.curve is None:
        # fully smooth: vectorize over all cells at once
        nodes = (edges[:-1, None] + h * gx[None, :]).ravel()  # n*q per axis
        X, Y = np.meshgrid(nodes, nodes, indexing="ij")
        vals = f.piece1(X, Y)
        V = vals.reshape(n, quad_order, n, quad_order)
        avg = np.einsum("iajb,a,b->ij", V, gw, gw)
        return CellGrid(n, h, avg)

    vals = np.empty((n, n))
    warnings = 0
    for i in range(n):
        x0, x1 = edges[i], edges[i + 1]
        for j in range(n):
            y0, y1 = edges[j], edges[j + 1]
            if _box_crossed(f, x0, x1, y0, y1):
                s, w = _crossed_cell_average(f, x0, x1, y0, y1, quad_order)
                vals[i, j] = s / (h * h)
                warnings += w
            else:
                mid_in = bool(np.asarray(f.indicator((x0 + x1) / 2.0, (y0 + y1) / 2.0)))
                piece = f.piece1 if mid_in else f.piece2
                vals[i, j] = _gauss_cell_average(piece, x0, x1, y0, y1, quad_order)
    if warnings:
        log.warning("discretize: %d sub-cells hit the subdivision depth cap", warnings)
    return CellGrid(n, h, vals, quad_warnings=warnings)


# ---------------------------------------------------------------------------
# Aggregation round trip
# ---------------------------------------------------------------------------


def _kahan_cumsum(a: np.ndarray, axis: int) -> np.ndarray:
    """Compensated cumulative sum along one axis."""
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    s = np.zeros(a.shape[1:])
    comp = np.zeros(a.shape[1:])
    for k in range(a.shape[0]):
        y = a[k] - comp
        t = s + y
        comp = (t - s) - y
        s = t
        out[k] = s
    return np.moveaxis(out, 0, axis)


def aggregate(g: CellGrid) -> AggregateGrid:
    """Aggregated data F_{k,l} = h^2 * sum_{i<=k, j<=l} cell averages."""
    inner = _kahan_cumsum(_kahan_cumsum(g.values * g.h * g.h, 0), 1)
    F = np.zeros((g.n + 1, g.n + 1))
    F[1:, 1:] = inner
    return AggregateGrid(g.n, F)


def difference(F: AggregateGrid) -> CellGrid:
    """Recover cell averages from the primitive point values."""
    n = F.n
    h = 1.0 / n
    V = F.values
    vals = (V[1:, 1:] - V[:-1, 1:] - V[1:, :-1] + V[:-1, :-1]) * (n * n)
    return CellGrid(n, h, vals)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def write_grid_csv(g: CellGrid, path) -> None:
    """CellGrid CSV: header "n=<int>,h=<repr>", then line j = row j (y index)."""
    with open(path, "w") as fh:
        fh.write(f"n={g.n},h={g.h!r}\n")
        for j in range(g.n):
            fh.write(",".join(fmt17(g.values[i, j]) for i in range(g.n)) + "\n")


def read_grid_csv(path) -> CellGrid:
    with open(path) as fh:
        header = fh.readline().strip()
        parts = dict(kv.split("=") for kv in header.split(","))
        n = int(parts["n"])
        h = float(parts["h"])
        vals = np.empty((n, n))
        for j in range(n):
            row = fh.readline().strip().split(",")
            vals[:, j] = [float(v) for v in row]
    return CellGrid(n, h, vals)


def write_extended_csv(e: ExtendedGrid, path) -> None:
    """Extended-grid CSV: header carries the margin; unknown cells print as nan."""
    size = e.n + 2 * e.ext
    out = np.where(e.known, e.values, np.nan)
    with open(path, "w") as fh:
        fh.write(f"n={e.n},h={e.h!r},ext={e.ext}\n")
        for j in range(size):
            fh.write(",".join(fmt17(out[i, j]) if np.isfinite(out[i, j]) else "nan"
                              for i in range(size)) + "\n")


def read_extended_csv(path) -> ExtendedGrid:
    with open(path) as fh:
        header = fh.readline().strip()
        parts = dict(kv.split("=") for kv in header.split(","))
        n, h, ext = int(parts["n"]), float(parts["h"]), int(parts["ext"])
        size = n + 2 * ext
        vals = np.empty((size, size))
        for j in range(size):
            row = fh.readline().strip().split(",")
            vals[:, j] = [float(v) for v in row]
    known = np.isfinite(vals)
    vals = np.where(known, vals, 0.0)
    return ExtendedGrid(n, h, ext, vals, known)
