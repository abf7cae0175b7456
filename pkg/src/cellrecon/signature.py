"""Signature of cell-average data and the singularity-cell partition.

The signature is the 5-point discrete Laplacian of the cell averages; it is
O(h^2) where the function is C^2 and O(1) on cells near the jump curve,
which drives the detection of the irregular set U0 and the two-sided
partition U1/U2.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import NoJumpDetected, PartitionFailure
from .grid import CellGrid, TestFunction

log = logging.getLogger("cellrecon.signature")

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class SignatureField:
    """Discrete-Laplacian values s_{i,j} for interior cells 2 <= i,j <= n-1.

    ``s[a, b]`` holds the value for cell (a+2, b+2).
    """

    n: int
    s: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.s, dtype=float)
        if v.shape != (self.n - 2, self.n - 2):
            raise ValueError("signature must be (n-2) x (n-2)")
        if not np.all(np.isfinite(v)):
            raise ValueError("signature entries must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "s", v)


def compute_signature(g: CellGrid) -> SignatureField:
    """5-point stencil f[i-1,j] + f[i,j-1] - 4 f[i,j] + f[i+1,j] + f[i,j+1]."""
    if g.n < 4:
        raise ValueError("signature needs n >= 4")
    v = g.values
    s = (v[:-2, 1:-1] + v[1:-1, :-2] - 4.0 * v[1:-1, 1:-1]
         + v[2:, 1:-1] + v[1:-1, 2:])
    return SignatureField(g.n, s)


def estimate_delta(g: CellGrid, hc_prime: float) -> float:
    """Minimal neighbor difference exceeding sqrt(hc_prime).

    Differences inside the smooth regions stay below the threshold for a
    small enough hc_prime, so the minimum over the surviving candidates
    approximates the minimal jump across the curve.
    """
    if not 0.0 < hc_prime < 1.0:
        raise ValueError("hc_prime must lie in (0, 1)")
    thr = math.sqrt(hc_prime)
    v = g.values
    dx = np.abs(v[1:, :] - v[:-1, :]).ravel()
    dy = np.abs(v[:, 1:] - v[:, :-1]).ravel()
    diffs = np.concatenate((dx, dy))
    candidates = diffs[diffs > thr]
    if candidates.size == 0:
        raise NoJumpDetected(
            f"no neighbor difference exceeds sqrt(hc_prime) = {thr:g}")
    return float(candidates.min())


@dataclass(frozen=True)
class CellPartition:
    """U0/U1/U2 labeling of all cells (1-based indices in the accessors).

    ``labels[i-1, j-1]``: 0 for U0, 1 for U1, 2 for U2.  U0 separates the
    two sides among interior cells; boundary-ring cells (which carry no
    signature) are attached to the nearest interior component.
    """

    n: int
    labels: np.ndarray
    delta_est: float
    threshold_mode: str
    threshold_value: float
    closed: bool

    def __post_init__(self):
        v = np.asarray(self.labels, dtype=np.int8)
        if v.shape != (self.n, self.n):
            raise ValueError("labels must be n x n")
        v.flags.writeable = False
        object.__setattr__(self, "labels", v)

    def _cells(self, lab: int) -> set[tuple[int, int]]:
        ii, jj = np.nonzero(self.labels == lab)
        return {(int(i) + 1, int(j) + 1) for i, j in zip(ii, jj)}

    @cached_property
    def u0(self) -> set[tuple[int, int]]:
        return self._cells(0)

    @cached_property
    def u1(self) -> set[tuple[int, int]]:
        return self._cells(1)

    @cached_property
    def u2(self) -> set[tuple[int, int]]:
        return self._cells(2)

    def label_at_point(self, x, y):
        """Label of the cell containing each point (clamped to the domain)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        i = np.clip(np.floor(x * self.n).astype(int), 0, self.n - 1)
        j = np.clip(np.floor(y * self.n).astype(int), 0, self.n - 1)
        return self.labels[i, j]


def detect(g: CellGrid, sig: SignatureField, mode: str = "theoretical",
           param: float | None = None) -> CellPartition:
    """Threshold the signature into U0 and flood-fill the two sides.

    mode="theoretical": param is the estimated jump delta*, threshold
    delta*/2.  mode="relative": param is a fraction rho, threshold
    rho * max|s|.  Interior non-U0 cells must form exactly two 4-connected
    components; boundary-ring cells are then attached to the component of
    the nearest labeled interior cell.  U1 is the component that ends up
    containing cell (1, 1).
    """
    n = g.n
    if sig.n != n:
        raise ValueError("signature does not match grid")
    if param is None:
        raise ValueError("detect requires the threshold parameter")
    if mode == "theoretical":
        delta_est = float(param)
        threshold = delta_est / 2.0
    elif mode == "relative":
        rho = float(param)
        if not 0.0 < rho < 1.0:
            raise ValueError("relative threshold fraction must be in (0, 1)")
        threshold = rho * float(np.abs(sig.s).max())
        delta_est = 2.0 * threshold  # implied jump for T = delta/2
    else:
        raise ValueError(f"unknown threshold mode {mode!r}")

    u0_interior = np.zeros((n, n), dtype=bool)
    if threshold > 0.0:
        u0_interior[1:-1, 1:-1] = np.abs(sig.s) >= threshold

    interior = np.zeros((n, n), dtype=bool)
    interior[1:-1, 1:-1] = True
    fillable = interior & ~u0_interior
    comp, ncomp = ndimage.label(fillable, structure=_FOUR_CONNECTED)
    if ncomp > 2:
        # crossed cells whose stencil cancels leave pinholes inside the band;
        # absorb them into U0, but never anything of substantial area
        sizes = ndimage.sum_labels(np.ones_like(comp), comp,
                                   index=np.arange(1, ncomp + 1))
        order = np.argsort(-sizes, kind="stable")
        hole_cap = max(4, int(0.01 * n * n))
        absorbed = 0
        keep = {int(order[0]) + 1, int(order[1]) + 1}
        for lab in range(1, ncomp + 1):
            if lab in keep:
                continue
            if sizes[lab - 1] > hole_cap:
                raise PartitionFailure(
                    f"interior flood fill produced {ncomp} components with "
                    f"more than two of substantial size", components=ncomp)
            absorbed += int(sizes[lab - 1])
            comp[comp == lab] = 0
        first, second = sorted(keep)
        comp[comp == first] = -1
        comp[comp == second] = -2
        comp = -comp
        log.info("detect: absorbed %d band-interior hole cell(s) into U0",
                 absorbed)
        ncomp = 2
    if ncomp != 2:
        raise PartitionFailure(
            f"interior flood fill produced {ncomp} component(s), expected 2",
            components=ncomp)

    labels = np.zeros((n, n), dtype=np.int8)
    labels[comp == 1] = 1
    labels[comp == 2] = 2

    # attach the boundary ring to the nearest labeled interior cell
    ring = ~interior
    ri, rj = np.nonzero(ring)
    li, lj = np.nonzero(comp > 0)
    centers = np.column_stack(((li + 0.5), (lj + 0.5)))
    tree = cKDTree(centers)
    ring_pts = np.column_stack(((ri + 0.5), (rj + 0.5)))
    k = min(4, len(centers))
    dd, ii = tree.query(ring_pts, k=k)
    dd = np.atleast_2d(dd)
    ii = np.atleast_2d(ii)
    for row in range(len(ring_pts)):
        dmin = dd[row, 0]
        cands = ii[row][dd[row] <= dmin * (1.0 + 1e-12)]
        lab = int(min(comp[li[c], lj[c]] for c in cands))
        labels[ri[row], rj[row]] = lab

    # U1 is whichever component contains cell (1, 1)
    if labels[0, 0] == 2:
        swap = labels.copy()
        swap[labels == 1] = 2
        swap[labels == 2] = 1
        labels = swap

    # closed curve: exactly one component touches the boundary ring
    ring_labels = set(np.unique(labels[ring]))
    closed = len(ring_labels) == 1

    return CellPartition(n=n, labels=labels, delta_est=delta_est,
                         threshold_mode=mode, threshold_value=threshold,
                         closed=closed)


# ---------------------------------------------------------------------------
# JSON interface
# ---------------------------------------------------------------------------


def partition_to_json(p: CellPartition) -> str:
    def cell_list(cells):
        return sorted([list(c) for c in cells])

    return json.dumps({
        "n": p.n,
        "delta_est": p.delta_est,
        "threshold": p.threshold_value,
        "u0": cell_list(p.u0),
        "u1": cell_list(p.u1),
        "u2": cell_list(p.u2),
    })


def partition_from_json(text: str) -> CellPartition:
    d = json.loads(text)
    n = d["n"]
    labels = np.zeros((n, n), dtype=np.int8)
    for lab, key in ((0, "u0"), (1, "u1"), (2, "u2")):
        for i, j in d[key]:
            labels[i - 1, j - 1] = lab
    ring = np.zeros((n, n), dtype=bool)
    ring[[0, -1], :] = True
    ring[:, [0, -1]] = True
    closed = len(set(np.unique(labels[ring]))) == 1
    return CellPartition(n=n, labels=labels, delta_est=d["delta_est"],
                         threshold_mode="theoretical",
                         threshold_value=d["threshold"], closed=closed)


# ---------------------------------------------------------------------------
# Lemma bound report (test harness, not part of the pipeline)
# ---------------------------------------------------------------------------


@dataclass
class LemmaReport:
    far_violations: list
    near_violations: list
    n_far_checked: int
    n_near_checked: int


def check_lemma_bounds(g: CellGrid, sig: SignatureField,
                       f: TestFunction) -> LemmaReport:
    """Check |s| <= M h^2 on far cells and |s| >= jump/2 on the near ring.

    Far cells have box distance >= h from the curve; near cells have center
    distance in (h/2, h].  Violations are reported, never raised.
    """
    n, h = g.n, g.h
    far_violations = []
    near_violations = []
    n_far = 0
    n_near = 0
    far_bound = f.m_bound * h * h
    tol = 1e-12

    for i in range(2, n):
        for j in range(2, n):
            s = sig.s[i - 2, j - 2]
            if f.curve is None:
                n_far += 1
                if abs(s) > far_bound + tol:
                    far_violations.append((i, j, float(s), far_bound))
                continue
            x0, x1 = (i - 1) * h, i * h
            y0, y1 = (j - 1) * h, j * h
            box_d = f.curve.box_distance(x0, x1, y0, y1)
            if box_d >= h:
                n_far += 1
                if abs(s) > far_bound + tol:
                    far_violations.append((i, j, float(s), far_bound))
                continue
            center = np.array([[(i - 0.5) * h, (j - 0.5) * h]])
            pd = float(f.curve.distance(center)[0])
            if h / 2.0 < pd <= h:
                n_near += 1
                cp = f.curve.closest_point(center)[0]
                jump = abs(float(f.piece1(cp[0], cp[1]))
                           - float(f.piece2(cp[0], cp[1])))
                if abs(s) < jump / 2.0 - tol:
                    near_violations.append((i, j, float(s), jump / 2.0))

    return LemmaReport(far_violations, near_violations, n_far, n_near)
