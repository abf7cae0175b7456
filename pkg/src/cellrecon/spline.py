"""Tensor-product B-spline machinery.

Covers the quasi-interpolation coefficient tables built from central
factorial numbers, the local cell-average operator L_p, the global
quasi-interpolant Q_p, least-squares surface fitting, point-value
quasi-interpolation on uniform meshes, and zero-level-curve extraction.

Basis convention: B_p is the centered cardinal B-spline of degree p with
support [-(p+1)/2, (p+1)/2].  A TensorSpline evaluates

    S(x, y) = sum_{k,l} coeff[k, l] * B_p((x - ox)/d - k) * B_p((y - oy)/d - l)

so basis (k, l) is centered at (ox + k*d, oy + l*d).  For cell-average
quasi-interpolants the lattice sits on the cell centers; this half-cell
offset is what makes polynomial reproduction exact.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import EmptyContour, IncompleteWindow, SingularSystem
from .grid import CellGrid, ExtendedGrid, fmt17

log = logging.getLogger("cellrecon.spline")


# ---------------------------------------------------------------------------
# Central factorial numbers and quasi-interpolation coefficients
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def central_factorial(i: int, j: int) -> Fraction:
    """Central factorial number of the first kind t(i, j), exact rational.

    Two-step recursion t(i,j) = t(i-2,j-2) - ((i-2)/2)^2 t(i-2,j) with
    t(i,i) = 1, t(i,j) = 0 for j > i, t(i,0) = 0 for i > 0 and
    t(i,1) = prod_{l=1}^{i-1} (i/2 - l).
    """
    if i < 0 or j < 0 or i > 64 or j > 64:
        raise ValueError("central_factorial supports 0 <= i, j <= 64")
    if j > i:
        return Fraction(0)
    if j == i:
        return Fraction(1)
    if j == 0:
        return Fraction(1) if i == 0 else Fraction(0)
    if j == 1:
        prod = Fraction(1)
        for l in range(1, i):
            prod *= Fraction(i, 2) - l
        return prod
    return (central_factorial(i - 2, j - 2)
            - Fraction(i - 2, 2) ** 2 * central_factorial(i - 2, j))


@dataclass(frozen=True)
class QuasiCoeffTable:
    """Coefficients c_{p,j}, j = -floor(p/2)..floor(p/2), exact and float."""

    p: int
    fractions: tuple[Fraction, ...]

    @property
    def halfwidth(self) -> int:
        return self.p // 2

    @property
    def reals(self) -> np.ndarray:
        return np.array([float(c) for c in self.fractions])

    def __getitem__(self, j: int) -> Fraction:
        return self.fractions[j + self.halfwidth]


@lru_cache(maxsize=None)
def quasi_coeffs(p: int) -> QuasiCoeffTable:
    """Exact rational c_{p,j} table for 1 <= p <= 5.

    The outer sum runs over l = 0 .. ceil((p+1)/2) - 1; with a floor the
    table is wrong for even p (e.g. c_{2,0} would come out 1 instead of
    5/4), and only the ceiling reproduces the published values.
    """
    if not 1 <= p <= 5:
        raise ValueError("quasi_coeffs supports 1 <= p <= 5")
    w = p // 2
    c = [Fraction(0)] * (2 * w + 1)
    lmax = (p + 2) // 2 - 1
    for l in range(lmax + 1):
        t = central_factorial(2 * l + p + 1, p + 1)
        factor = t / math.comb(2 * l + p + 1, p + 1)
        for i in range(2 * l + 1):
            target = l - i + (p + 2) // 2  # ceil((p+1)/2)
            j = target - 1 - w
            if -w <= j <= w:
                c[j + w] += factor * Fraction((-1) ** i,
                                              math.factorial(i) * math.factorial(2 * l - i))
    table = QuasiCoeffTable(p, tuple(c))
    assert sum(table.fractions) == 1
    return table


# point-value quasi-interpolation stencil for cubic splines on mesh values;
# reproduces polynomials of degree 3 (validated by the exactness tests)
_MESH_STENCIL = (Fraction(-1, 6), Fraction(4, 3), Fraction(-1, 6))


# ---------------------------------------------------------------------------
# Cardinal B-spline evaluation
# ---------------------------------------------------------------------------


def bspline_value(p: int, t) -> np.ndarray:
    """Centered cardinal B-spline of degree p at t (vectorized)."""
    t = np.asarray(t, dtype=float)
    k = p + 1
    x = t + k / 2.0
    # V[j] = M_m(x - j) built up from the order-1 box splines
    V = [np.where((x - j >= 0.0) & (x - j < 1.0), 1.0, 0.0) for j in range(k)]
    for m in range(2, k + 1):
        V = [((x - j) * V[j] + (m - (x - j)) * V[j + 1]) / (m - 1)
             for j in range(k - m + 1)]
    return V[0]


def basis_support_halfwidth(p: int) -> float:
    return (p + 1) / 2.0


# ---------------------------------------------------------------------------
# Tensor-product spline surface
# ---------------------------------------------------------------------------


@dataclass
class TensorSpline:
    """Uniform-knot tensor-product spline on (and beyond) the unit square."""

    degree: int
    spacing: float
    origin: tuple[float, float]
    coeff: np.ndarray
    fit_residual: float | None = None

    def __post_init__(self):
        self.coeff = np.asarray(self.coeff, dtype=float)
        if self.coeff.ndim != 2:
            raise ValueError("coeff must be a 2-D array")

    def _axis_basis(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Active indices (S, p+1) and basis values for lattice coords u."""
        p = self.degree
        kf = np.floor(u - (p + 1) / 2.0).astype(int) + 1
        idx = kf[:, None] + np.arange(p + 1)[None, :]
        vals = bspline_value(p, u[:, None] - idx)
        return idx, vals

    def eval(self, x, y) -> np.ndarray:
        """Evaluate at scattered points (arrays broadcast together)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        xf = np.broadcast_to(x, shape).ravel()
        yf = np.broadcast_to(y, shape).ravel()
        ux = (xf - self.origin[0]) / self.spacing
        uy = (yf - self.origin[1]) / self.spacing
        ix, bx = self._axis_basis(ux)
        iy, by = self._axis_basis(uy)
        kx, ky = self.coeff.shape
        okx = (ix >= 0) & (ix < kx)
        oky = (iy >= 0) & (iy < ky)
        cix = np.clip(ix, 0, kx - 1)
        ciy = np.clip(iy, 0, ky - 1)
        C = self.coeff[cix[:, :, None], ciy[:, None, :]]
        C = C * okx[:, :, None] * oky[:, None, :]
        out = np.einsum("sa,sb,sab->s", bx, by, C)
        return out.reshape(shape)

    def eval_grid(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Separable evaluation on a tensor grid; returns (len(xs), len(ys))."""
        Bx = self._basis_matrix(np.asarray(xs, dtype=float), axis=0)
        By = self._basis_matrix(np.asarray(ys, dtype=float), axis=1)
        return Bx @ self.coeff @ By.T

    def _basis_matrix(self, coords: np.ndarray, axis: int) -> np.ndarray:
        u = (coords - self.origin[axis]) / self.spacing
        idx, vals = self._axis_basis(u)
        K = self.coeff.shape[axis]
        B = np.zeros((len(coords), K))
        ok = (idx >= 0) & (idx < K)
        rows = np.repeat(np.arange(len(coords)), self.degree + 1)
        np.add.at(B, (rows[ok.ravel()], idx.ravel()[ok.ravel()]),
                  vals.ravel()[ok.ravel()])
        return B


def spline_to_json(s: TensorSpline) -> str:
    return json.dumps({
        "degree": s.degree,
        "knot_spacing": s.spacing,
        "origin": [s.origin[0], s.origin[1]],
        "convention": "basis (k,l) centered at origin + (k,l)*knot_spacing",
        "coeff": [[float(v) for v in row] for row in s.coeff],
    })


def spline_from_json(text: str) -> TensorSpline:
    d = json.loads(text)
    return TensorSpline(degree=d["degree"], spacing=d["knot_spacing"],
                        origin=(d["origin"][0], d["origin"][1]),
                        coeff=np.array(d["coeff"], dtype=float))


# ---------------------------------------------------------------------------
# Local operator and global quasi-interpolant for cell averages
# ---------------------------------------------------------------------------


def local_op_L(p: int, window: np.ndarray) -> float:
    """Tensor-weighted window sum sum_j c_{p,j1} c_{p,j2} f[n+j1, n+j2].

    The window must be the complete (2 floor(p/2) + 1)^2 block centered on
    the target cell.
    """
    w = p // 2
    window = np.asarray(window, dtype=float)
    if window.shape != (2 * w + 1, 2 * w + 1):
        raise IncompleteWindow(
            f"window must be {2 * w + 1} x {2 * w + 1} for p = {p}")
    if not np.all(np.isfinite(window)):
        raise IncompleteWindow("window contains missing entries")
    c = quasi_coeffs(p).reals
    return float(c @ window @ c)


def _separable_window_sum(arr: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Correlate arr with weights along both axes (valid region only)."""
    w = (len(weights) - 1) // 2
    m0, m1 = arr.shape
    out = np.zeros((m0 - 2 * w, m1))
    for k, ck in enumerate(weights):
        out += ck * arr[k:m0 - 2 * w + k, :]
    out2 = np.zeros((m0 - 2 * w, m1 - 2 * w))
    for k, ck in enumerate(weights):
        out2 += ck * out[:, k:m1 - 2 * w + k]
    return out2


def _auto_extend(g: CellGrid, margin: int) -> ExtendedGrid:
    """Extend a plain grid outward by cubic extrapolation along each axis."""
    e = ExtendedGrid.from_grid(g, margin)
    V = e.values
    n, ext = g.n, margin
    idx = np.arange(4, dtype=float)

    def lagrange_extr(block: np.ndarray, t: float) -> np.ndarray:
        # block rows: 4 samples at abscissas 0..3; extrapolate to t
        w = np.array([np.prod([(t - m) / (k - m) for m in range(4) if m != k])
                      for k in range(4)])
        return np.tensordot(w, block, axes=(0, 0))

    # left/right in x, using original columns only
    for layer in range(1, ext + 1):
        V[ext - layer, ext:ext + n] = lagrange_extr(V[ext:ext + 4, ext:ext + n], -float(layer))
        V[ext + n - 1 + layer, ext:ext + n] = lagrange_extr(
            V[ext + n - 4:ext + n, ext:ext + n][::-1], -float(layer))
    # top/bottom in y, using the already-extended rows so corners fill too
    for layer in range(1, ext + 1):
        V[:, ext - layer] = lagrange_extr(V[:, ext:ext + 4].T, -float(layer))
        V[:, ext + n - 1 + layer] = lagrange_extr(V[:, ext + n - 4:ext + n].T[::-1],
                                                  -float(layer))
    e.known[:, :] = True
    return e


def quasi_interpolant(g: CellGrid | ExtendedGrid, p: int,
                      coeff_mask: np.ndarray | None = None) -> TensorSpline:
    """Global quasi-interpolant Q_p from cell averages.

    Spline coefficient (n1, n2) is L_{p+1} applied to the (p+1)-window
    around cell (n1, n2); the basis attached to (n1, n2) is centered at the
    cell center.  The coefficient lattice overhangs the domain by
    floor((p+1)/2) cells per side, so the input must provide (possibly
    extrapolated) averages for a margin of 2*floor((p+1)/2) cells.
    """
    w = (p + 1) // 2  # window halfwidth of L_{p+1} and lattice overhang
    margin = 2 * w
    if isinstance(g, CellGrid):
        e = _auto_extend(g, margin)
    else:
        e = g
        if e.ext < margin:
            raise IncompleteWindow(
                f"extension margin {e.ext} < required {margin} for p = {p}")
    c = quasi_coeffs(p + 1).reals
    lo = e.ext - margin  # array offset of cell index 1 - margin
    size = e.n + 2 * margin
    block = e.values[lo:lo + size, lo:lo + size]
    coeffs = _separable_window_sum(block, c)

    if coeff_mask is not None:
        if coeff_mask.shape != coeffs.shape:
            raise ValueError("coeff_mask shape mismatch")
        coeffs = np.where(coeff_mask, coeffs, 0.0)
    else:
        known_block = e.known[lo:lo + size, lo:lo + size]
        if not known_block.all():
            raise IncompleteWindow("grid extension does not cover the lattice")

    # lattice index k corresponds to cell n = k + (1 - w) centered at (n-1/2)h
    origin = (0.5 - w) * e.h
    return TensorSpline(degree=p, spacing=e.h, origin=(origin, origin),
                        coeff=coeffs)


# ---------------------------------------------------------------------------
# Least-squares fitting of scattered samples
# ---------------------------------------------------------------------------


def fit_least_squares(samples: np.ndarray, degree: int = 3,
                      knot_spacing: float = 0.25,
                      regularization: float = 1e-10) -> TensorSpline:
    """Least-squares spline through samples (x, y, value).

    Normal equations with a Tikhonov term; the regularization pins
    coefficients whose basis support contains no samples.  With
    regularization = 0 a condition number above 1e12 raises SingularSystem.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 3:
        raise ValueError("samples must be (m, 3): x, y, value")
    p = degree
    d = knot_spacing
    ext = (p + 1) // 2
    kmax = math.ceil(round(1.0 / d, 12)) + ext
    K = kmax + ext + 1  # lattice k = -ext .. kmax
    origin = -ext * d

    spl = TensorSpline(degree=p, spacing=d, origin=(origin, origin),
                       coeff=np.zeros((K, K)))
    Bx = spl._basis_matrix(samples[:, 0], axis=0)
    By = spl._basis_matrix(samples[:, 1], axis=1)
    # row s of A: outer product of Bx[s] and By[s]
    A = np.einsum("si,sj->sij", Bx, By).reshape(len(samples), K * K)
    G = A.T @ A
    rhs = A.T @ samples[:, 2]
    if regularization == 0.0:
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularSystem(f"normal matrix condition {cond:.3e} > 1e12")
        coeffs = np.linalg.solve(G, rhs)
    else:
        G = G + regularization * np.eye(K * K)
        coeffs, *_ = np.linalg.lstsq(G, rhs, rcond=None)
    spl.coeff = coeffs.reshape(K, K)
    resid = float(np.linalg.norm(A @ coeffs - samples[:, 2]))
    spl.fit_residual = resid
    log.info("fit_least_squares: %d samples, %d^2 coefficients, residual %.3e",
             len(samples), K, resid)
    return spl


# ---------------------------------------------------------------------------
# Point-value quasi-interpolation on a uniform mesh
# ---------------------------------------------------------------------------


def quasi_fit_on_mesh(meshvalues: np.ndarray, spacing: float,
                      origin: tuple[float, float] = (0.0, 0.0)) -> TensorSpline:
    """Bicubic spline from point values on a uniform mesh.

    Coefficient stencil (-1/6, 4/3, -1/6) per axis reproduces cubics; the
    mesh is first extended two layers per side by cubic extrapolation so
    the spline covers the full mesh rectangle.
    """
    V = np.asarray(meshvalues, dtype=float)
    if V.ndim != 2 or V.shape[0] < 4 or V.shape[1] < 4:
        raise ValueError("mesh must be at least 4 x 4")
    m0, m1 = V.shape

    def extend(arr: np.ndarray) -> np.ndarray:
        k0 = arr.shape[0]
        out = np.empty((k0 + 4, arr.shape[1]))
        out[2:2 + k0] = arr
        for t, row in ((-1.0, 1), (-2.0, 0)):
            w = np.array([np.prod([(t - m) / (k - m) for m in range(4) if m != k])
                          for k in range(4)])
            out[row] = w @ arr[:4]
        for t, row in ((4.0, k0 + 2), (5.0, k0 + 3)):
            # samples arr[k0-4:] sit at local abscissas 0..3
            w = np.array([np.prod([(t - m) / (k - m) for m in range(4) if m != k])
                          for k in range(4)])
            out[row] = w @ arr[k0 - 4:]
        return out

    E = extend(extend(V).T).T
    st = np.array([float(c) for c in _MESH_STENCIL])
    coeffs = _separable_window_sum(E, st)  # lattice j = -1 .. m per axis
    ox = origin[0] - spacing
    oy = origin[1] - spacing
    return TensorSpline(degree=3, spacing=spacing, origin=(ox, oy), coeff=coeffs)


# ---------------------------------------------------------------------------
# Zero-level-curve extraction
# ---------------------------------------------------------------------------


def _bisect_edge(S: TensorSpline, P0: np.ndarray, P1: np.ndarray,
                 tol: float = 1e-12, iters: int = 60) -> np.ndarray:
    """Vectorized bisection of S along the segments P0 -> P1."""
    a = np.zeros(len(P0))
    b = np.ones(len(P0))
    fa = S.eval(P0[:, 0], P0[:, 1])
    for _ in range(iters):
        m = 0.5 * (a + b)
        pm = P0 + m[:, None] * (P1 - P0)
        fm = S.eval(pm[:, 0], pm[:, 1])
        done = np.abs(fm) <= tol
        same = (fm >= 0.0) == (fa >= 0.0)
        a = np.where(same & ~done, m, a)
        fa = np.where(same & ~done, fm, fa)
        b = np.where(~same & ~done, m, b)
        if done.all():
            break
    m = 0.5 * (a + b)
    return P0 + m[:, None] * (P1 - P0)


def zero_level_curve(S: TensorSpline, resolution: int = 256,
                     refine_passes: int = 0) -> list[np.ndarray]:
    """Marching-squares contour of S on [0,1]^2 with per-edge bisection.

    Returns ordered polylines; closed loops repeat their first vertex at the
    end.  ``refine_passes`` optionally inserts midpoints pulled onto the
    zero set (along segment normals) to reduce chordal sagging when the
    polyline is used for distance measurements.
    """
    m = int(resolution)
    if m < 64:
        raise ValueError("resolution must be >= 64")
    xs = np.linspace(0.0, 1.0, m)
    vals = S.eval_grid(xs, xs)
    pos = vals >= 0.0
    if pos.all() or (~pos).all():
        raise EmptyContour("spline has constant sign on the sample grid")

    # crossing edges: key ('h', ix, iy) for xs[ix]..xs[ix+1] at y=xs[iy];
    # ('v', ix, iy) for ys
    h_cross = pos[:-1, :] != pos[1:, :]
    v_cross = pos[:, :-1] != pos[:, 1:]

    edge_points: dict[tuple, int] = {}
    P0_list, P1_list = [], []

    def register(kind, ix, iy):
        key = (kind, ix, iy)
        if key not in edge_points:
            edge_points[key] = len(P0_list)
            if kind == "h":
                P0_list.append((xs[ix], xs[iy]))
                P1_list.append((xs[ix + 1], xs[iy]))
            else:
                P0_list.append((xs[ix], xs[iy]))
                P1_list.append((xs[ix], xs[iy + 1]))
        return edge_points[key]

    segments: list[tuple[int, int]] = []
    hi, hj = np.nonzero(h_cross)
    vi, vj = np.nonzero(v_cross)
    for ix, iy in zip(hi, hj):
        register("h", ix, iy)
    for ix, iy in zip(vi, vj):
        register("v", ix, iy)

    cell_edges: dict[tuple[int, int], list] = {}
    for ix, iy in zip(hi, hj):
        if iy < m - 1:
            cell_edges.setdefault((ix, iy), []).append(("h", ix, iy))
        if iy > 0:
            cell_edges.setdefault((ix, iy - 1), []).append(("h", ix, iy))
    for ix, iy in zip(vi, vj):
        if ix < m - 1:
            cell_edges.setdefault((ix, iy), []).append(("v", ix, iy))
        if ix > 0:
            cell_edges.setdefault((ix - 1, iy), []).append(("v", ix, iy))

    centers_needed = [(ix, iy) for (ix, iy), ee in cell_edges.items() if len(ee) == 4]
    center_sign = {}
    if centers_needed:
        cx = np.array([0.5 * (xs[ix] + xs[ix + 1]) for ix, _ in centers_needed])
        cy = np.array([0.5 * (xs[iy] + xs[iy + 1]) for _, iy in centers_needed])
        cv = S.eval(cx, cy)
        center_sign = {c: (v >= 0.0) for c, v in zip(centers_needed, cv)}

    for (ix, iy), ee in cell_edges.items():
        if len(ee) == 2:
            segments.append((edge_points[ee[0]], edge_points[ee[1]]))
        elif len(ee) == 4:
            # saddle: bottom ('h',ix,iy), top ('h',ix,iy+1), left ('v',ix,iy),
            # right ('v',ix+1,iy); pair by the center sign
            bottom = edge_points[("h", ix, iy)]
            top = edge_points[("h", ix, iy + 1)]
            left = edge_points[("v", ix, iy)]
            right = edge_points[("v", ix + 1, iy)]
            corner = pos[ix, iy]
            if center_sign[(ix, iy)] == corner:
                segments.append((bottom, right))
                segments.append((top, left))
            else:
                segments.append((bottom, left))
                segments.append((top, right))
        # len(ee) odd cannot happen with the >= 0 sign convention

    if not segments:
        raise EmptyContour("no sign-change edges found")

    pts = _bisect_edge(S, np.array(P0_list), np.array(P1_list))

    # stitch segments into chains
    adj: dict[int, list[int]] = {}
    for a, b in segments:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)

    unused = {tuple(sorted(s)) for s in segments}

    def walk(start: int) -> list[int]:
        chain = [start]
        cur = start
        while True:
            nxt = None
            for cand in adj.get(cur, ()):
                key = tuple(sorted((cur, cand)))
                if key in unused:
                    unused.discard(key)
                    nxt = cand
                    break
            if nxt is None:
                return chain
            chain.append(nxt)
            cur = nxt

    polylines = []
    degree1 = sorted(k for k, v in adj.items() if len(v) == 1)
    for node in degree1:
        if any(tuple(sorted((node, c))) in unused for c in adj[node]):
            chain = walk(node)
            polylines.append(pts[np.array(chain)])
    while unused:
        a, b = sorted(unused)[0]
        chain = walk(a)
        if chain[-1] != chain[0] and chain[-1] in adj and chain[0] in adj[chain[-1]]:
            chain.append(chain[0])
        polylines.append(pts[np.array(chain)])

    polylines.sort(key=lambda P: (P[0, 0], P[0, 1]))

    for _ in range(refine_passes):
        polylines = [_refine_polyline(S, P) for P in polylines]
    return polylines


def _refine_polyline(S: TensorSpline, P: np.ndarray) -> np.ndarray:
    """Insert midpoints pulled onto the zero set along segment normals."""
    if len(P) < 2:
        return P
    A, B = P[:-1], P[1:]
    mid = 0.5 * (A + B)
    tang = B - A
    lens = np.hypot(tang[:, 0], tang[:, 1])
    lens = np.where(lens == 0.0, 1.0, lens)
    normal = np.column_stack((-tang[:, 1], tang[:, 0])) / lens[:, None]
    off = lens[:, None]
    Q0 = mid - normal * off
    Q1 = mid + normal * off
    f0 = S.eval(Q0[:, 0], Q0[:, 1])
    f1 = S.eval(Q1[:, 0], Q1[:, 1])
    ok = (f0 >= 0.0) != (f1 >= 0.0)
    refined = mid.copy()
    if ok.any():
        refined[ok] = _bisect_edge(S, Q0[ok], Q1[ok])
    out = np.empty((len(P) + len(mid), 2))
    out[0::2] = P
    out[1::2] = refined
    return out


# ---------------------------------------------------------------------------
# Polyline CSV and operator-norm probe
# ---------------------------------------------------------------------------


def write_polylines_csv(polylines: list[np.ndarray], path) -> None:
    """Polyline CSV: "x,y" per vertex, blank line between polylines."""
    with open(path, "w") as fh:
        for k, P in enumerate(polylines):
            if k:
                fh.write("\n")
            for x, y in P:
                fh.write(f"{fmt17(x)},{fmt17(y)}\n")


def read_polylines_csv(path) -> list[np.ndarray]:
    polylines = []
    current: list[list[float]] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                if current:
                    polylines.append(np.array(current))
                    current = []
                continue
            x, y = line.split(",")
            current.append([float(x), float(y)])
    if current:
        polylines.append(np.array(current))
    return polylines


def mesh_operator_norm_estimate(m: int = 33, samples: int = 4096,
                                seed: int = 0) -> float:
    """Empirical sup-norm of the mesh quasi-interpolation operator.

    Max |S| over random points for random +-1 mesh data; reported alongside
    benchmark output (the theory needs only that this is bounded).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    d = 1.0 / (m - 1)
    for _ in range(8):
        data = rng.choice((-1.0, 1.0), size=(m, m))
        S = quasi_fit_on_mesh(data, d)
        pts = rng.random((samples, 2))
        worst = max(worst, float(np.abs(S.eval(pts[:, 0], pts[:, 1])).max()))
    return worst
