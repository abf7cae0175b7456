"""Final piecewise approximation of the function.

The implicit curve splits the square into two sides; cells are classified
valid/non-valid per side by a five-point sign test, non-valid cells needed
by the quasi-interpolation stencils are refilled by one-dimensional cubic
extrapolation of valid averages, and each side gets its own bicubic
quasi-interpolant.  Evaluation dispatches on the sign of the curve spline.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .curve import ImplicitCurve, PolylineSet
from .errors import InsufficientValidRun, OutOfDomain, SingularSystem
from .grid import CellGrid, ExtendedGrid, TestFunction, fmt17, gauss_rule, \
    write_extended_csv
from .spline import TensorSpline, bspline_value, quasi_interpolant, \
    spline_from_json, spline_to_json

log = logging.getLogger("cellrecon.reconstruct")

_STENCIL_HALFWIDTH = 2  # window halfwidth of L_4 and lattice overhang for Q_3
_EXT = 2 * _STENCIL_HALFWIDTH


@dataclass
class CellValidity:
    """Per-side validity flags from the five-point sign test."""

    n: int
    valid1: np.ndarray
    valid2: np.ndarray

    @property
    def band(self) -> np.ndarray:
        return ~self.valid1 & ~self.valid2


@dataclass
class PiecewiseReconstruction:
    """Implicit curve, two extended grids, and the two side splines."""

    curve: ImplicitCurve | None
    side1: ExtendedGrid
    side2: ExtendedGrid
    spline1: TensorSpline
    spline2: TensorSpline
    validity: CellValidity | None = None
    meta: dict = field(default_factory=dict)

    def membership(self, x, y) -> np.ndarray:
        """True where the point belongs to side 1 (curve spline >= 0)."""
        if self.curve is None:
            return np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape,
                           dtype=bool)
        return np.asarray(self.curve.spline.eval(x, y)) >= 0.0

    def __call__(self, x, y):
        return evaluate(self, x, y)


def classify_cells(curve: ImplicitCurve | None, n: int) -> CellValidity:
    """Five-point sign test per cell: all four corners plus the center.

    A cell is valid for a side only when the curve spline carries that
    side's strict sign at all five points; cells crossed by the zero set
    are valid for neither.
    """
    if curve is None:
        return CellValidity(n, np.ones((n, n), dtype=bool),
                            np.zeros((n, n), dtype=bool))
    S = curve.spline
    edges = np.linspace(0.0, 1.0, n + 1)
    centers = (edges[:-1] + edges[1:]) / 2.0
    C = S.eval_grid(edges, edges)
    M = S.eval_grid(centers, centers)
    pos = ((C[:-1, :-1] > 0) & (C[1:, :-1] > 0) & (C[:-1, 1:] > 0)
           & (C[1:, 1:] > 0) & (M > 0))
    neg = ((C[:-1, :-1] < 0) & (C[1:, :-1] < 0) & (C[:-1, 1:] < 0)
           & (C[1:, 1:] < 0) & (M < 0))
    return CellValidity(n, pos, neg)


# ---------------------------------------------------------------------------
# Extension of non-valid cells
# ---------------------------------------------------------------------------


def _lagrange_extrapolate(abscissas: np.ndarray, values: np.ndarray,
                          target: float) -> float:
    total = 0.0
    m = len(abscissas)
    for k in range(m):
        w = 1.0
        for l in range(m):
            if l != k:
                w *= (target - abscissas[l]) / (abscissas[k] - abscissas[l])
        total += w * values[k]
    return total


def _nearest_run(valid_line: np.ndarray, start: int, step: int,
                 n: int) -> tuple[int, list[int]] | None:
    """First valid run scanning from ``start`` (exclusive) in direction step.

    Returns (distance to run start, run indices moving away), where indices
    are 1-based cell positions along the scanned axis.
    """
    pos = start + step
    dist = 1
    while 1 <= pos <= n:
        if valid_line[pos - 1]:
            run = [pos]
            nxt = pos + step
            while 1 <= nxt <= n and len(run) < 4 and valid_line[nxt - 1]:
                run.append(nxt)
                nxt += step
            return dist, run
        pos += step
        dist += 1
    return None


def extend_side(g: CellGrid, validity: np.ndarray,
                stencil_need: np.ndarray) -> ExtendedGrid:
    """Fill the needed non-valid and out-of-domain cells for one side.

    ``stencil_need`` is a boolean mask over the extended index range
    [1-4, n+4]^2 (array offset 4).  Each needed cell that is not a valid
    in-domain cell is extrapolated along the axis direction whose nearest
    valid run starts closest (ties resolved in the order +x, -x, +y, -y)
    through up to four consecutive valid averages.
    """
    n = g.n
    e = ExtendedGrid(n, g.h, _EXT,
                     np.zeros((n + 2 * _EXT, n + 2 * _EXT)),
                     np.zeros((n + 2 * _EXT, n + 2 * _EXT), dtype=bool))
    inside = e.values[_EXT:_EXT + n, _EXT:_EXT + n]
    inside[validity] = g.values[validity]
    e.known[_EXT:_EXT + n, _EXT:_EXT + n] = validity

    ni, nj = np.nonzero(stencil_need)
    order = np.lexsort((nj, ni))
    for k in order:
        ai, aj = int(ni[k]), int(nj[k])
        i = ai - _EXT + 1  # 1-based cell indices, may leave [1, n]
        j = aj - _EXT + 1
        if 1 <= i <= n and 1 <= j <= n and validity[i - 1, j - 1]:
            continue
        candidates = []
        if 1 <= j <= n:
            row = validity[:, j - 1]
            for step, name in ((1, "+x"), (-1, "-x")):
                hit = _nearest_run(row, i, step, n)
                if hit:
                    candidates.append((hit[0], name, hit[1], "x"))
        if 1 <= i <= n:
            col = validity[i - 1, :]
            for step, name in ((1, "+y"), (-1, "-y")):
                hit = _nearest_run(col, j, step, n)
                if hit:
                    candidates.append((hit[0], name, hit[1], "y"))
        if not candidates:
            raise InsufficientValidRun(
                f"cell ({i}, {j}) has no valid run in any direction",
                cell=(i, j))
        tie_rank = {"+x": 0, "-x": 1, "+y": 2, "-y": 3}
        candidates.sort(key=lambda c: (c[0], tie_rank[c[1]]))
        _, direction, run, axis = candidates[0]
        absc = np.array(run, dtype=float)
        if axis == "x":
            vals = np.array([g.values[p - 1, j - 1] for p in run])
            target = float(i)
        else:
            vals = np.array([g.values[i - 1, p - 1] for p in run])
            target = float(j)
        e.values[ai, aj] = _lagrange_extrapolate(absc, vals, target)
        e.known[ai, aj] = True
        e.provenance[(i, j)] = {"direction": direction,
                                "source": (run[0], run[-1]),
                                "degree": len(run) - 1}
    return e


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _needed_masks(presence: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient and cell need masks from a cell-presence indicator.

    Works on the extended index range [1-4, n+4] (offset 4); a coefficient
    is needed when its 5x5 window meets the presence set, a cell is needed
    when it lies in some needed coefficient's window.
    """
    size = n + 2 * _EXT
    lat = np.zeros((size, size), dtype=bool)
    lat[_EXT:_EXT + n, _EXT:_EXT + n] = presence
    needed_coeffs = ndimage.maximum_filter(lat, size=5, mode="constant")
    # restrict to the actual coefficient lattice [-1, n+2]
    coeff_zone = np.zeros_like(needed_coeffs)
    lo = _EXT - _STENCIL_HALFWIDTH  # array index of lattice point 1 - halfwidth
    hi = lo + n + 2 * _STENCIL_HALFWIDTH
    coeff_zone[lo:hi, lo:hi] = needed_coeffs[lo:hi, lo:hi]
    needed_cells = ndimage.maximum_filter(coeff_zone, size=5, mode="constant")
    coeff_mask = coeff_zone[lo:hi, lo:hi]
    return coeff_mask, needed_cells


def build_reconstruction(g: CellGrid,
                         curve: ImplicitCurve | None) -> PiecewiseReconstruction:
    """Classify, extend, and build the two side quasi-interpolants."""
    n = g.n
    validity = classify_cells(curve, n)
    band = validity.band

    sides = []
    for valid in (validity.valid1, validity.valid2):
        presence = valid | band
        if not presence.any():
            # side without any territory: zero spline, never evaluated
            size_lat = n + 2 * _STENCIL_HALFWIDTH
            ext = ExtendedGrid(n, g.h, _EXT,
                               np.zeros((n + 2 * _EXT, n + 2 * _EXT)),
                               np.zeros((n + 2 * _EXT, n + 2 * _EXT), dtype=bool))
            origin = (0.5 - _STENCIL_HALFWIDTH) * g.h
            spl = TensorSpline(degree=3, spacing=g.h, origin=(origin, origin),
                               coeff=np.zeros((size_lat, size_lat)))
            sides.append((ext, spl))
            continue
        coeff_mask, needed_cells = _needed_masks(presence, n)
        ext = extend_side(g, valid, needed_cells)
        spl = quasi_interpolant(ext, 3, coeff_mask=coeff_mask)
        sides.append((ext, spl))

    return PiecewiseReconstruction(curve=curve, side1=sides[0][0],
                                   side2=sides[1][0], spline1=sides[0][1],
                                   spline2=sides[1][1], validity=validity,
                                   meta={"n": n, "method": "quasi"})


def evaluate(r: PiecewiseReconstruction, x, y):
    """Piecewise evaluation: side-1 spline where the curve spline is >= 0.

    The measure-zero tie S = 0 goes to side 1 by convention.  Raises
    OutOfDomain for points outside the unit square.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12) \
            or np.any(y < -1e-12) or np.any(y > 1.0 + 1e-12):
        raise OutOfDomain("evaluation points must lie in [0, 1]^2")
    mask = r.membership(x, y)
    v1 = r.spline1.eval(x, y)
    v2 = r.spline2.eval(x, y)
    out = np.where(mask, v1, v2)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Alternative path: least-squares fit of cell averages (order ceiling h^2)
# ---------------------------------------------------------------------------


def _bspline_integral_1d(p: int, a: float, b: float) -> float:
    """Exact integral of the centered cardinal B-spline over [a, b]."""
    half = (p + 1) / 2.0
    a = max(a, -half)
    b = min(b, half)
    if b <= a:
        return 0.0
    knots = [-half + k for k in range(p + 2)]
    cuts = [a] + [k for k in knots if a < k < b] + [b]
    gx, gw = gauss_rule((p + 3) // 2)  # exact for degree p on each span
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        xs = lo + (hi - lo) * gx
        total += (hi - lo) * float(gw @ bspline_value(p, xs))
    return total


def _axis_integral_table(n: int, h: float, d: float, origin: float,
                         K: int, p: int) -> np.ndarray:
    """T[i, k] = integral of basis k over cell i (physical units)."""
    T = np.zeros((n, K))
    for i in range(n):
        u0 = (i * h - origin) / d
        u1 = ((i + 1) * h - origin) / d
        for k in range(K):
            T[i, k] = d * _bspline_integral_1d(p, u0 - k, u1 - k)
    return T


def fit_cell_average_ls(g: CellGrid, curve: ImplicitCurve | None,
                        knot_spacing: float = 0.25,
                        regularization: float = 1e-10
                        ) -> PiecewiseReconstruction:
    """Least-squares fit of per-side basis cell averages to the data.

    The basis consists of bicubic B-splines restricted to each side of the
    implicit curve; every cell contributes one equation matching the model
    cell average (exact integration, with sign-bisection slicing on crossed
    cells) to the observed average.  Position error of the curve enters the
    crossed-cell averages at first order, which caps this path at O(h^2).
    """
    n, h = g.n, g.h
    p = 3
    d = knot_spacing
    ext = (p + 1) // 2
    kmax = math.ceil(round(1.0 / d, 12)) + ext
    K = kmax + ext + 1
    origin = -ext * d

    validity = classify_cells(curve, n)
    T = _axis_integral_table(n, h, d, origin, K, p)

    # active coefficients per side: support meets a valid or crossed cell
    def active_mask(valid: np.ndarray) -> np.ndarray:
        presence = valid | validity.band
        mask = np.zeros((K, K), dtype=bool)
        touch = T > 0.0  # cell i touches basis k
        for kx in range(K):
            cols_x = np.nonzero(touch[:, kx])[0]
            if len(cols_x) == 0:
                continue
            for ky in range(K):
                cols_y = np.nonzero(touch[:, ky])[0]
                if len(cols_y) == 0:
                    continue
                if presence[np.ix_(cols_x, cols_y)].any():
                    mask[kx, ky] = True
        return mask

    act1 = active_mask(validity.valid1)
    act2 = active_mask(validity.valid2)
    idx1 = np.nonzero(act1.ravel())[0]
    idx2 = np.nonzero(act2.ravel())[0]

    rows = n * n
    A = np.zeros((rows, len(idx1) + len(idx2)))
    crossed = validity.band if curve is not None else np.zeros((n, n), dtype=bool)

    # full cells: separable integral on the side that owns the cell
    inv_h2 = 1.0 / (h * h)
    col_of1 = {c: q for q, c in enumerate(idx1)}
    col_of2 = {c: q for q, c in enumerate(idx2)}
    for i in range(n):
        for j in range(n):
            row = i * n + j
            if validity.valid1[i, j] or (curve is None):
                outer = np.outer(T[i], T[j]).ravel() * inv_h2
                for c in np.nonzero(outer)[0]:
                    q = col_of1.get(c)
                    if q is not None:
                        A[row, q] = outer[c]
            elif validity.valid2[i, j]:
                outer = np.outer(T[i], T[j]).ravel() * inv_h2
                for c in np.nonzero(outer)[0]:
                    q = col_of2.get(c)
                    if q is not None:
                        A[row, len(idx1) + q] = outer[c]

    if crossed.any():
        S = curve.spline
        gx, gw = gauss_rule(12)
        ci, cj = np.nonzero(crossed)
        for i, j in zip(ci, cj):
            row = i * n + j
            x0, x1 = i * h, (i + 1) * h
            y0, y1 = j * h, (j + 1) * h
            xs = x0 + (x1 - x0) * gx
            # bisect the sign change of S along y for each x node
            lo = np.full_like(xs, y0)
            hi = np.full_like(xs, y1)
            s_lo = S.eval(xs, lo) >= 0.0
            s_hi = S.eval(xs, hi) >= 0.0
            cross_line = s_lo != s_hi
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                s_mid = S.eval(xs, mid) >= 0.0
                same = s_mid == s_lo
                lo = np.where(cross_line & same, mid, lo)
                hi = np.where(cross_line & ~same, mid, hi)
            ystar = np.where(cross_line, 0.5 * (lo + hi), y1)
            # inner exact basis integrals per node and per part
            ux = (xs - origin) / d
            Bx = bspline_value(p, ux[:, None] - np.arange(K)[None, :])
            for part_lo, part_hi, side_flags in (
                    (np.full_like(xs, y0), ystar, s_lo),
                    (ystar, np.full_like(xs, y1), s_hi)):
                inner = np.zeros((len(xs), K))
                for node in range(len(xs)):
                    ulo = (part_lo[node] - origin) / d
                    uhi = (part_hi[node] - origin) / d
                    if uhi <= ulo:
                        continue
                    for kk in range(K):
                        inner[node, kk] = d * _bspline_integral_1d(
                            p, ulo - kk, uhi - kk)
                for flag_side1 in (True, False):
                    sel = side_flags if flag_side1 else ~side_flags
                    if not sel.any():
                        continue
                    part = np.einsum("s,sk,sl->kl", gw[sel] * (x1 - x0),
                                     Bx[sel], inner[sel]).ravel() * inv_h2
                    table = col_of1 if flag_side1 else col_of2
                    base = 0 if flag_side1 else len(idx1)
                    for c in np.nonzero(part)[0]:
                        qcol = table.get(c)
                        if qcol is not None:
                            A[row, base + qcol] += part[c]

    rhs = g.values.ravel()
    G = A.T @ A
    if regularization == 0.0:
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularSystem(f"normal matrix condition {cond:.3e} > 1e12")
        coeffs = np.linalg.solve(G, A.T @ rhs)
    else:
        coeffs = np.linalg.lstsq(G + regularization * np.eye(G.shape[0]),
                                 A.T @ rhs, rcond=None)[0]
    residual = float(np.linalg.norm(A @ coeffs - rhs))
    log.info("fit_cell_average_ls: residual %.3e with %d + %d coefficients",
             residual, len(idx1), len(idx2))

    c1 = np.zeros(K * K)
    c1[idx1] = coeffs[:len(idx1)]
    c2 = np.zeros(K * K)
    c2[idx2] = coeffs[len(idx1):]
    spl1 = TensorSpline(degree=p, spacing=d, origin=(origin, origin),
                        coeff=c1.reshape(K, K), fit_residual=residual)
    spl2 = TensorSpline(degree=p, spacing=d, origin=(origin, origin),
                        coeff=c2.reshape(K, K), fit_residual=residual)
    side = ExtendedGrid.from_grid(g, 0)
    return PiecewiseReconstruction(curve=curve, side1=side, side2=side,
                                   spline1=spl1, spline2=spl2,
                                   validity=validity,
                                   meta={"n": n, "method": "ls",
                                         "knot_spacing": d,
                                         "residual": residual})


# ---------------------------------------------------------------------------
# Graph Hausdorff distance
# ---------------------------------------------------------------------------


def graph_hausdorff(r: PiecewiseReconstruction, f: TestFunction, m: int,
                    seed: int = 0, near_curve_points: int = 10000) -> float:
    """Symmetric Hausdorff distance in R^3 between the two graphs.

    Both graphs are sampled on an m x m grid augmented with random points
    within 2h of the true curve and of the approximated curve, where the
    distance between the graphs is realized.
    """
    n = r.side1.n
    h = 1.0 / n
    xs = np.linspace(0.0, 1.0, m)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = [np.column_stack((X.ravel(), Y.ravel()))]

    rng = np.random.default_rng(seed)

    def disk_offsets(k: int) -> np.ndarray:
        ang = rng.uniform(0.0, 2.0 * math.pi, k)
        rad = 2.0 * h * np.sqrt(rng.uniform(0.0, 1.0, k))
        return np.column_stack((rad * np.cos(ang), rad * np.sin(ang)))

    if f.curve is not None:
        base = f.curve.sample(near_curve_points)
        aug = base + disk_offsets(len(base))
        pts.append(np.clip(aug, 0.0, 1.0))
    if r.curve is not None and r.curve.polylines:
        verts = np.vstack(r.curve.polylines)
        take = rng.integers(0, len(verts), near_curve_points)
        aug = verts[take] + disk_offsets(near_curve_points)
        pts.append(np.clip(aug, 0.0, 1.0))

    P = np.vstack(pts)
    zf = np.asarray(f.evaluate(P[:, 0], P[:, 1]), dtype=float)
    zr = np.asarray(evaluate(r, P[:, 0], P[:, 1]), dtype=float)
    Gf = np.column_stack((P, zf))
    Gr = np.column_stack((P, zr))
    tf = cKDTree(Gf)
    tr = cKDTree(Gr)
    d1, _ = tr.query(Gf)
    d2, _ = tf.query(Gr)
    return max(float(d1.max()), float(d2.max()))


# ---------------------------------------------------------------------------
# Bundle output
# ---------------------------------------------------------------------------


def write_bundle(path: str, r: PiecewiseReconstruction,
                 manifest: dict) -> None:
    """Reconstruction bundle: curve spline, side grids, side splines, manifest."""
    os.makedirs(path, exist_ok=True)
    if r.curve is not None:
        with open(os.path.join(path, "curve_spline.json"), "w") as fh:
            fh.write(spline_to_json(r.curve.spline))
    write_extended_csv(r.side1, os.path.join(path, "side1_ext.csv"))
    write_extended_csv(r.side2, os.path.join(path, "side2_ext.csv"))
    with open(os.path.join(path, "spline1.json"), "w") as fh:
        fh.write(spline_to_json(r.spline1))
    with open(os.path.join(path, "spline2.json"), "w") as fh:
        fh.write(spline_to_json(r.spline2))
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_bundle_splines(path: str) -> tuple[TensorSpline | None, TensorSpline,
                                            TensorSpline]:
    """Load (curve spline or None, side-1 spline, side-2 spline)."""
    curve_path = os.path.join(path, "curve_spline.json")
    curve_spline = None
    if os.path.exists(curve_path):
        with open(curve_path) as fh:
            curve_spline = spline_from_json(fh.read())
    with open(os.path.join(path, "spline1.json")) as fh:
        s1 = spline_from_json(fh.read())
    with open(os.path.join(path, "spline2.json")) as fh:
        s2 = spline_from_json(fh.read())
    return curve_spline, s1, s2
