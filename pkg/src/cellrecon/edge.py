"""Local quadratic edge model along the detected singularity band.

Each anchor cell in U0 gets a 3x8 window in a local frame where the curve
crosses the middle four rows.  Linear pieces are fitted from the clean rows,
the three column sums over the band rows give a 3x3 quadratic system in the
curve coefficients, and Newton's iteration recovers the local parabola
q(x) = a x^2 + b x + c h.

All solving happens in unit-cell coordinates (xi, eta) = (x/h, y/h) with
unknowns (a h, b, c); in these coordinates the Jacobian determinant for
constant pieces is exactly 2 (jump)^3, which is the vanishing-jump guard.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import (EmptyChain, NewtonDivergence, NoValidWindow,
                     SingularJacobian, SingularLinearSystem)
from .grid import CellGrid, fmt17
from .signature import CellPartition

log = logging.getLogger("cellrecon.edge")


# ---------------------------------------------------------------------------
# Local frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Frame:
    """Affine map local = A @ global + t with A a signed permutation."""

    a: np.ndarray
    t: np.ndarray

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return pts @ self.a.T + self.t

    def to_global(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return (pts - self.t) @ self.a  # A orthogonal: inverse = transpose

    def as_tuple(self) -> tuple:
        return (float(self.a[0, 0]), float(self.a[0, 1]), float(self.a[1, 0]),
                float(self.a[1, 1]), float(self.t[0]), float(self.t[1]))


def _make_frame(orientation: str, reflect: bool, b_main: int, b_cross: int,
                h: float) -> Frame:
    """Frame for a window block.

    ``b_main`` is the first global index along the 3-cell local-x axis,
    ``b_cross`` the first global index along the 8-cell local-y axis.
    For orientation y-of-x the 3-cell axis is global x; for x-of-y it is
    global y (the roles of the global axes swap).
    """
    # reflected local-y: global row b_cross + o maps to local row 9 - o,
    # so y_local = (b_cross + 8) h - y_global
    if orientation == "y-of-x":
        A = np.array([[1.0, 0.0], [0.0, -1.0 if reflect else 1.0]])
        t = np.array([-(b_main - 2) * h,
                      (b_cross + 8) * h if reflect else -(b_cross - 2) * h])
    else:
        A = np.array([[0.0, 1.0], [-1.0 if reflect else 1.0, 0.0]])
        t = np.array([-(b_main - 2) * h,
                      (b_cross + 8) * h if reflect else -(b_cross - 2) * h])
    return Frame(A, t)


@dataclass(frozen=True)
class EdgeWindow:
    """3x8 block of cell averages in the local window frame.

    ``cells[li-2, lj-2]`` is the average of the local cell (li, lj),
    li in {2,3,4}, lj in {2,..,9}; rows 2-3 lie in U1, rows 8-9 in U2
    and the band is confined to rows 4-7.  ``band_local`` lists local
    (li, lj) of U0 cells, used to initialize Newton.
    """

    anchor: tuple[int, int]
    orientation: str
    frame: Frame
    cells: np.ndarray
    h: float
    band_local: tuple[tuple[int, int], ...]


def _window_from_block(labels: np.ndarray, values: np.ndarray, n: int,
                       orientation: str, b_main: int, b_cross: int,
                       anchor: tuple[int, int], h: float) -> EdgeWindow | None:
    """Try one block placement; None when the clean-row invariant fails."""
    if b_main < 1 or b_main + 2 > n or b_cross < 1 or b_cross + 7 > n:
        return None
    if orientation == "y-of-x":
        block_lab = labels[b_main - 1:b_main + 2, b_cross - 1:b_cross + 7]
        block_val = values[b_main - 1:b_main + 2, b_cross - 1:b_cross + 7]
    else:
        block_lab = labels[b_cross - 1:b_cross + 7, b_main - 1:b_main + 2].T
        block_val = values[b_cross - 1:b_cross + 7, b_main - 1:b_main + 2].T
    # block_lab[a, b]: a = local-x offset 0..2, b = local-y offset 0..7
    lowpair = block_lab[:, 0:2]
    highpair = block_lab[:, 6:8]
    midband = block_lab[:, 2:6]
    if (lowpair == 0).any() or (highpair == 0).any():
        return None
    low_side = lowpair.ravel()
    high_side = highpair.ravel()
    if not (low_side == low_side[0]).all() or not (high_side == high_side[0]).all():
        return None
    if low_side[0] == high_side[0]:
        return None
    if not (midband == 0).any():
        return None
    reflect = low_side[0] == 2
    if reflect:
        block_val = block_val[:, ::-1]
        midband = midband[:, ::-1]
    frame = _make_frame(orientation, reflect, b_main, b_cross, h)
    band = tuple((a + 2, b + 2 + 2) for a, b in zip(*np.nonzero(midband == 0)))
    return EdgeWindow(anchor=anchor, orientation=orientation, frame=frame,
                      cells=block_val.copy(), h=h, band_local=band)


def build_window(part: CellPartition, g: CellGrid,
                 anchor: tuple[int, int]) -> EdgeWindow:
    """Place a valid 3x8 window around an anchor cell of the band.

    The orientation is chosen so the band runs more along local-x than
    local-y near the anchor (ties prefer y-of-x); candidate placements are
    scanned centered on the anchor, and the frame reflects local-y so that
    U1 maps below the band.
    """
    i0, j0 = anchor
    labels = part.labels
    n = part.n
    if labels[i0 - 1, j0 - 1] != 0:
        raise NoValidWindow(f"anchor {anchor} is not a band cell")

    # band spread near the anchor decides the primary orientation
    r = 3
    isl = slice(max(0, i0 - 1 - r), min(n, i0 + r))
    jsl = slice(max(0, j0 - 1 - r), min(n, j0 + r))
    bi, bj = np.nonzero(labels[isl, jsl] == 0)
    spread_i = bi.max() - bi.min() if len(bi) else 0
    spread_j = bj.max() - bj.min() if len(bj) else 0
    primary = "y-of-x" if spread_i >= spread_j else "x-of-y"
    secondary = "x-of-y" if primary == "y-of-x" else "y-of-x"

    for orientation in (primary, secondary):
        if orientation == "y-of-x":
            main0, cross0 = i0, j0
        else:
            main0, cross0 = j0, i0
        for b_main in (main0 - 1, main0 - 2, main0):
            for b_cross in (cross0 - 3, cross0 - 4, cross0 - 2, cross0 - 5):
                w = _window_from_block(labels, g.values, n, orientation,
                                       b_main, b_cross, anchor, g.h)
                if w is not None:
                    return w
    raise NoValidWindow(f"no clean 3x8 placement around anchor {anchor}")


# ---------------------------------------------------------------------------
# Linear pieces and the quadratic system
# ---------------------------------------------------------------------------


_L1_CELLS = ((3, 2), (3, 3), (4, 3))
_L2_CELLS = ((3, 9), (3, 8), (4, 8))


def fit_linear_pieces(w: EdgeWindow) -> tuple[tuple[float, float, float],
                                              tuple[float, float, float]]:
    """Fit the two linear side models from three clean cells each.

    Cell averages of a linear function equal its value at the cell center,
    so each side is a 3x3 collocation solve.  Coefficients are returned in
    local physical coordinates (alpha*x + beta*y + gamma).
    """
    out = []
    for cells in (_L1_CELLS, _L2_CELLS):
        M = np.array([[li - 0.5, lj - 0.5, 1.0] for li, lj in cells])
        rhs = np.array([w.cells[li - 2, lj - 2] for li, lj in cells])
        if abs(np.linalg.det(M)) < 1e-10:
            raise SingularLinearSystem("degenerate center triple")  # unreachable
        sol = np.linalg.solve(M, rhs)
        out.append((sol[0] / w.h, sol[1] / w.h, sol[2]))
    return out[0], out[1]


class QuadraticSystem(NamedTuple):
    Q: Callable[[np.ndarray], np.ndarray]
    F: np.ndarray
    J: Callable[[np.ndarray], np.ndarray]
    H_bound: float


def assemble_quadratic_system(w: EdgeWindow,
                              L1: tuple[float, float, float],
                              L2: tuple[float, float, float]) -> QuadraticSystem:
    """Closed-form quadratic system Q_i(a,b,c) = column band sums.

    Q_i integrates (L1 - L2) below the parabola plus L2 over the band rows
    of column i, expanded exactly through the monomial integrals of
    xi^0..xi^4, so each component is a quadratic polynomial in the
    unknowns.  Unknowns are the unit-coordinate coefficients (a h, b, c).
    """
    h = w.h
    a1, b1, g1 = L1[0] * h, L1[1] * h, L1[2]
    a2, b2, g2 = L2[0] * h, L2[1] * h, L2[2]
    da, db, dg = a1 - a2, b1 - b2, g1 - g2

    cols = np.array([2.0, 3.0, 4.0])
    I = np.empty((5, 3))
    for k in range(5):
        I[k] = (cols ** (k + 1) - (cols - 1.0) ** (k + 1)) / (k + 1)

    lin = np.empty((3, 3))
    Hs = np.empty((3, 3, 3))
    const = np.empty(3)
    for c in range(3):
        I0, I1, I2, I3, I4 = I[0, c], I[1, c], I[2, c], I[3, c], I[4, c]
        lin[c] = (da * I3 + dg * I2,
                  da * I2 + dg * I1,
                  da * I1 + dg * I0)
        Hs[c] = db * np.array([[I4, I3, I2],
                               [I3, I2, I1],
                               [I2, I1, I0]])
        const[c] = (-3.0 * (da * I1 + dg * I0) - 4.5 * db * I0
                    + 4.0 * a2 * I1 + (20.0 * b2 + 4.0 * g2) * I0)

    def Q(v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return const + lin @ v + 0.5 * np.einsum("ijk,j,k->i", Hs, v, v)

    def J(v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return lin + np.einsum("ijk,k->ij", Hs, v)

    F = w.cells[:, 2:6].sum(axis=1)
    H_bound = float(max(np.abs(Hs[i]).sum(axis=1).max() for i in range(3)))
    return QuadraticSystem(Q=Q, F=F, J=J, H_bound=H_bound)


def initial_guess(w: EdgeWindow) -> np.ndarray:
    """Line fit through the band cell centers: a = 0, (b, c) least squares."""
    pts = np.array([(li - 0.5, lj - 0.5) for li, lj in w.band_local])
    if len(pts) == 0:
        return np.array([0.0, 0.0, 5.0])
    if len(pts) == 1:
        return np.array([0.0, 0.0, pts[0, 1]])
    M = np.column_stack((pts[:, 0], np.ones(len(pts))))
    sol, *_ = np.linalg.lstsq(M, pts[:, 1], rcond=None)
    return np.array([0.0, sol[0], sol[1]])


def newton_solve(Q: Callable, F: np.ndarray, J: Callable, init,
                 tol: float = 1e-12, max_iters: int = 25
                 ) -> tuple[np.ndarray, int, float]:
    """Newton iteration on Q(v) = F; returns (v, iterations, residual).

    Raises SingularJacobian when |det J| falls below 1e-14 * scale^3
    (vanishing jump) and NewtonDivergence when the residual stops
    decreasing for three consecutive iterations or the budget runs out.
    """
    v = np.asarray(init, dtype=float).copy()
    prev_res = np.inf
    bad = 0
    for it in range(1, max_iters + 1):
        r = Q(v) - F
        res = float(np.abs(r).max())
        if res >= prev_res:
            bad += 1
            if bad >= 3:
                raise NewtonDivergence(
                    f"residual stalled at {res:.3e} after {it} iterations")
        else:
            bad = 0
        prev_res = res
        Jm = J(v)
        scale = max(float(np.abs(Jm).sum(axis=1).max()), 1e-8)
        det = float(np.linalg.det(Jm))
        if abs(det) < 1e-14 * scale ** 3:
            raise SingularJacobian(
                f"|det J| = {abs(det):.3e} below the vanishing-jump guard")
        step = np.linalg.solve(Jm, r)
        v = v - step
        if float(np.abs(step).max()) <= tol:
            final = float(np.abs(Q(v) - F).max())
            return v, it, final
    raise NewtonDivergence(f"no convergence within {max_iters} iterations")


# ---------------------------------------------------------------------------
# Arcs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticArc:
    """One solved local edge model, q(x) = a x^2 + b x + c h in its frame."""

    anchor: tuple[int, int]
    orientation: str
    frame: Frame
    a: float
    b: float
    c: float
    x_range: tuple[float, float]
    L1: tuple[float, float, float]
    L2: tuple[float, float, float]
    residual: float
    newton_iters: int
    valid: bool

    def q(self, x):
        return (self.a * x + self.b) * x + self.c * (self.x_range[0] / 2.0)

    def sample(self, k: int = 16) -> np.ndarray:
        """Global-coordinate samples of the arc over its validity range."""
        h = self.x_range[0] / 2.0
        xs = np.linspace(self.x_range[0], self.x_range[1], max(k, 2))
        ys = (self.a * xs + self.b) * xs + self.c * h
        return self.frame.to_global(np.column_stack((xs, ys)))


def _arc_from_solution(w: EdgeWindow, v: np.ndarray, L1, L2,
                       iters: int, residual: float) -> QuadraticArc:
    h = w.h
    a = v[0] / h
    b = v[1]
    c = v[2]
    xs = np.linspace(2.0, 3.0, 65)
    qs = (v[0] * xs + v[1]) * xs + v[2]
    valid = bool(np.all((qs > 3.0) & (qs < 7.0)))
    return QuadraticArc(anchor=w.anchor, orientation=w.orientation,
                        frame=w.frame, a=a, b=b, c=c,
                        x_range=(2.0 * h, 3.0 * h), L1=L1, L2=L2,
                        residual=residual, newton_iters=iters, valid=valid)


def solve_window(w: EdgeWindow, tol: float = 1e-12,
                 max_iters: int = 25) -> QuadraticArc:
    """Fit pieces, assemble and solve the quadratic system for one window."""
    L1, L2 = fit_linear_pieces(w)
    system = assemble_quadratic_system(w, L1, L2)
    v, iters, residual = newton_solve(system.Q, system.F, system.J,
                                      initial_guess(w), tol=tol,
                                      max_iters=max_iters)
    return _arc_from_solution(w, v, L1, L2, iters, residual)


def chain_arcs(part: CellPartition, g: CellGrid,
               stride: int = 1) -> list[QuadraticArc]:
    """Solve local edge models along the whole band.

    Anchors walk the band in its principal direction, one per ``stride``
    band cells; failed placements and divergent solves are skipped with a
    logged reason.  The surviving arcs are returned sorted by anchor.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ii, jj = np.nonzero(part.labels == 0)
    if len(ii) == 0:
        raise EmptyChain("band is empty")
    if (ii.max() - ii.min()) >= (jj.max() - jj.min()):
        order = np.lexsort((jj, ii))
    else:
        order = np.lexsort((ii, jj))
    anchors = [(int(ii[k]) + 1, int(jj[k]) + 1) for k in order[::stride]]

    arcs = []
    skipped = {"window": 0, "newton": 0, "jacobian": 0, "invalid": 0}
    for anchor in anchors:
        try:
            w = build_window(part, g, anchor)
        except NoValidWindow:
            skipped["window"] += 1
            continue
        try:
            arc = solve_window(w)
        except NewtonDivergence:
            skipped["newton"] += 1
            continue
        except SingularJacobian:
            skipped["jacobian"] += 1
            continue
        if not arc.valid:
            skipped["invalid"] += 1
            continue
        arcs.append(arc)
    if any(skipped.values()):
        log.info("chain_arcs: skipped %s", skipped)
    if not arcs:
        raise EmptyChain("no arc survived along the band")
    arcs.sort(key=lambda a: a.anchor)

    # coverage check: warn about band cells far from every sampled arc point
    G = np.vstack([a.sample(16) for a in arcs])
    from scipy.spatial import cKDTree

    tree = cKDTree(G)
    centers = np.column_stack(((ii + 0.5) * g.h, (jj + 0.5) * g.h))
    dmin, _ = tree.query(centers)
    gap = float(dmin.max())
    if gap > 10.0 * g.h:
        log.warning("chain_arcs: band coverage gap of %.3g (%.1f cells)",
                    gap, gap / g.h)
    return arcs


def resample_arcs(arcs: list[QuadraticArc], spacing: float) -> list[np.ndarray]:
    """Densely resample every arc as a global polyline (spacing bound)."""
    polylines = []
    for arc in arcs:
        x0, x1 = arc.x_range
        slope = abs(2.0 * arc.a * x1 + arc.b)
        length = (x1 - x0) * (1.0 + slope ** 2) ** 0.5
        k = max(2, int(np.ceil(length / spacing)) + 1)
        polylines.append(arc.sample(k))
    return polylines


# ---------------------------------------------------------------------------
# JSON / CSV interfaces
# ---------------------------------------------------------------------------


def arcs_to_json(arcs: list[QuadraticArc]) -> str:
    return json.dumps([{
        "anchor": [arc.anchor[0], arc.anchor[1]],
        "orientation": arc.orientation,
        "frame": list(arc.frame.as_tuple()),
        "a": arc.a, "b": arc.b, "c": arc.c,
        "x_range": [arc.x_range[0], arc.x_range[1]],
        "residual": arc.residual,
        "iters": arc.newton_iters,
        "valid": arc.valid,
    } for arc in arcs])


def write_pointset_csv(points: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        for x, y in points:
            fh.write(f"{fmt17(x)},{fmt17(y)}\n")
