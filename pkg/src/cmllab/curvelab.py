"""Curve iteration with fold splitting for two-node lattices.

A curve is carried as a :class:`Polyline`: vertices in [0,1]^2 together with
the parameter of each vertex on the root curve. Iterating a curve means
splitting it at the fold lines x_i = kink into cell pieces, mapping every
piece with the branch of its cell, and repeating. The pieces at each depth
form a :class:`ComponentForest`.

For tent maps T is affine on every closed cell, so the image of a straight
edge is the straight edge between the vertex images and root parameters
interpolate linearly along it. For perturbed tents pieces are refined to a
maximal edge length ``h`` before the vertices are mapped.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CellMismatchError, ComponentExplosion, PreconditionError
from .maps import LatticeSystem, PerturbedTent, StandardTent, step_batch

log = logging.getLogger(__name__)

SLOPE_TOL = 1e-12
# Absolute floor for direction checks: vertex coordinates carry a few ulps of
# rounding, which on a 1e-5 long edge is already ~1e-11 in direction.
ROUND_FLOOR = 2.0 ** -46
DEGENERATE_LENGTH = 1e-15
SNAP_TOL = 1e-12
SIMPLE_CHECK_MAX = 2000
DEFAULT_H = 1e-4
DEFAULT_CAP = 1_000_000
DELTA1 = 2.0 ** -16
DELTA2 = 2.0 ** -8

_DIAG = np.array([1.0, 1.0]) / math.sqrt(2.0)
_ANTI = np.array([1.0, -1.0]) / math.sqrt(2.0)


def _segments_cross(P, Q, R, S):
    """Proper or touching intersection of segments PQ and RS (vectorised over
    the second argument pair)."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    d1 = orient(R, S, P)
    d2 = orient(R, S, Q)
    d3 = orient(P, Q, R)
    d4 = orient(P, Q, S)
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)

    def on_seg(a, b, c, d):
        return (d == 0) & (np.minimum(a[..., 0], b[..., 0]) <= c[..., 0]) & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0])) \
            & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1]) & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]))

    touch = on_seg(R, S, P, d1) | on_seg(R, S, Q, d2) | on_seg(P, Q, R, d3) | on_seg(P, Q, S, d4)
    return proper | touch


def is_simple(vertices) -> bool:
    """Exact-predicate check that a polyline does not intersect itself.

    Adjacent edges may share their common vertex; any other contact counts
    as an intersection. Quadratic in the number of edges.
    """
    V = np.asarray(vertices, dtype=float)
    n = V.shape[0] - 1
    closed = n >= 2 and np.array_equal(V[0], V[-1])
    for i in range(n):
        j0 = i + 2
        j1 = n - 1 if (closed and i == 0) else n  # edges j0..j1-1
        if j0 >= j1:
            continue
        hit = _segments_cross(V[i], V[i + 1], V[j0:j1], V[j0 + 1:j1 + 1])
        if np.any(hit):
            return False
    return True


class Polyline:
    """Ordered vertices in [0,1]^2 with root-curve parameters.

    ``params`` default to normalised arc length, so a fresh polyline is its
    own root with parameter interval [0, 1].
    """

    __slots__ = ("vertices", "params", "_length", "_slope")

    def __init__(self, vertices, params=None, check: bool = True):
        V = np.array(vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 2:
            raise PreconditionError(f"vertices must have shape (n, 2), got {V.shape}")
        if V.shape[0] < 2:
            raise PreconditionError("a polyline needs at least 2 vertices")
        edges = np.diff(V, axis=0)
        seg = np.hypot(edges[:, 0], edges[:, 1])
        if check:
            if not np.all(np.isfinite(V)) or np.any(V < 0.0) or np.any(V > 1.0):
                raise PreconditionError("polyline vertices must lie in [0,1]^2")
            if np.any(seg == 0.0):
                raise PreconditionError("consecutive vertices must be distinct")
            if V.shape[0] - 1 <= SIMPLE_CHECK_MAX and not is_simple(V):
                raise PreconditionError("polyline is not simple")
        if params is None:
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            params = cum / cum[-1] if cum[-1] > 0 else np.linspace(0.0, 1.0, V.shape[0])
        P = np.array(params, dtype=float)
        if P.shape != (V.shape[0],):
            raise PreconditionError("params must have one entry per vertex")
        V.setflags(write=False)
        P.setflags(write=False)
        self.vertices = V
        self.params = P
        self._length = float(seg.sum())
        self._slope = None

    @classmethod
    def segment(cls, a, b) -> "Polyline":
        return cls([a, b])

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def length(self) -> float:
        return self._length

    @property
    def edges(self) -> np.ndarray:
        return np.diff(self.vertices, axis=0)

    @property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.hypot(e[:, 0], e[:, 1])

    @property
    def tangents(self) -> np.ndarray:
        e = self.edges
        return e / np.hypot(e[:, 0], e[:, 1])[:, None]

    @property
    def slope_class(self) -> Optional[int]:
        """+1 or -1 when every edge runs along (1,1) or (1,-1), else None."""
        if self._slope is None:
            self._slope = _slope_class(self.edges)
        return self._slope if self._slope != 0 else None

    @property
    def interval(self) -> Tuple[float, float]:
        return float(self.params.min()), float(self.params.max())

    def linear(self, t) -> np.ndarray:
        """Points at fractions t of the first-to-last chord (segments only)."""
        t = np.asarray(t, dtype=float)[..., None]
        return self.vertices[0] + t * (self.vertices[-1] - self.vertices[0])

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "params": self.params.tolist()}

    def __repr__(self):
        return f"Polyline(n={self.n_vertices}, length={self.length:.6g}, slope={self.slope_class})"


def _slope_class(edges) -> int:
    L = np.hypot(edges[:, 0], edges[:, 1])
    tol = SLOPE_TOL * L + ROUND_FLOOR
    for sgn in (1, -1):
        if np.all(np.abs(edges[:, 0] - sgn * edges[:, 1]) <= tol):
            return sgn
    return 0


def _dedupe(V, P):
    keep = np.ones(V.shape[0], dtype=bool)
    keep[1:] = np.any(V[1:] != V[:-1], axis=1)
    return V[keep], P[keep]


# ---------------------------------------------------------------------------
# splitting and mapping


def cell_of_edges(V, kink: float = 0.5) -> np.ndarray:
    """Cell bits of each edge, by the edge midpoint (ties go right)."""
    mids = 0.5 * (V[:-1] + V[1:])
    return (mids >= kink).astype(np.int8)


def _insert_crossings(V, P, kink):
    S = np.sign(V - kink)
    cross = (S[:-1] * S[1:]) < 0
    idx = np.nonzero(cross.any(axis=1))[0]
    if idx.size == 0:
        return V, P
    vs, ps = [], []
    last = 0
    for e in idx:
        vs.append(V[last:e + 1])
        ps.append(P[last:e + 1])
        a, b = V[e], V[e + 1]
        hits = []
        for i in (0, 1):
            if cross[e, i]:
                hits.append([(kink - a[i]) / (b[i] - a[i]), [i]])
        hits.sort(key=lambda h: h[0])
        if len(hits) == 2 and hits[1][0] - hits[0][0] <= 1e-15:
            hits = [[hits[0][0], [0, 1]]]
        for t, coords in hits:
            pt = a + t * (b - a)
            pt[coords] = kink
            vs.append(pt[None, :])
            ps.append(np.array([P[e] + t * (P[e + 1] - P[e])]))
        last = e + 1
    vs.append(V[last:])
    ps.append(P[last:])
    return np.concatenate(vs), np.concatenate(ps)


def _snap_to_cell(V, J, kink):
    """Pull rounding-level violations of the closed cell onto its faces."""
    V = V.copy()
    for i, bit in enumerate(J):
        col = V[:, i]
        if bit:
            bad = (col < kink) & (col >= kink - SNAP_TOL)
        else:
            bad = (col > kink) & (col <= kink + SNAP_TOL)
        col[bad] = kink
    return V


def split_at_folds(curve: Polyline, kink: float = 0.5) -> List[Tuple[Polyline, Tuple[int, int]]]:
    """Cut a curve into maximal pieces lying in one closed cell each.

    Crossing points are linear interpolations along the crossed edge, with
    the crossed coordinate set exactly to ``kink``; they are duplicated into
    both adjacent pieces. Pieces shorter than 1e-15 are dropped with a
    warning.
    """
    V, P = _insert_crossings(curve.vertices, curve.params, kink)
    V, P = _dedupe(V, P)
    if V.shape[0] < 2:
        return []
    bits = cell_of_edges(V, kink)
    code = bits[:, 0] + 2 * bits[:, 1]
    breaks = np.nonzero(np.diff(code))[0] + 1
    starts = np.concatenate([[0], breaks])
    stops = np.concatenate([breaks, [code.size]])
    out = []
    for e0, e1 in zip(starts, stops):
        J = (int(bits[e0, 0]), int(bits[e0, 1]))
        Vp = _snap_to_cell(V[e0:e1 + 1], J, kink)
        Vp, Pp = _dedupe(Vp, P[e0:e1 + 1])
        if Vp.shape[0] < 2:
            continue
        piece = Polyline(Vp, Pp, check=False)
        if piece.length < DEGENERATE_LENGTH:
            log.warning("dropping degenerate piece of length %.3g in cell %s", piece.length, J)
            continue
        out.append((piece, J))
    return out


def in_closed_cell(V, J, kink: float = 0.5) -> bool:
    V = np.asarray(V, dtype=float)
    for i, bit in enumerate(J):
        if bit and np.any(V[:, i] < kink):
            return False
        if not bit and np.any(V[:, i] > kink):
            return False
    return True


def refine(curve: Polyline, h: float) -> Polyline:
    """Subdivide edges so that consecutive vertices are at most ``h`` apart."""
    V, P = curve.vertices, curve.params
    L = curve.edge_lengths
    k = np.maximum(1, np.ceil(L / h).astype(np.int64))
    if np.all(k == 1):
        return curve
    edge = np.repeat(np.arange(L.size), k)
    first = np.repeat(np.cumsum(k) - k, k)
    t = (np.arange(edge.size) - first) / k[edge]
    Vn = V[edge] + t[:, None] * (V[edge + 1] - V[edge])
    Pn = P[edge] + t * (P[edge + 1] - P[edge])
    Vn = np.vstack([Vn, V[-1]])
    Pn = np.append(Pn, P[-1])
    return Polyline(Vn, Pn, check=False)


def _require_planar(sys: LatticeSystem):
    if sys.m != 2:
        raise PreconditionError(f"curve operations need m = 2, got m = {sys.m}")


def map_curve(sys: LatticeSystem, piece: Polyline, J, h: float = DEFAULT_H) -> Polyline:
    """Image of a single-cell piece under T.

    Raises CellMismatchError if a vertex lies outside the closed cell J.
    """
    _require_planar(sys)
    J = tuple(int(b) for b in J)
    if not in_closed_cell(piece.vertices, J, sys.map.kink):
        raise CellMismatchError(f"piece does not lie in closed cell {J}")
    if isinstance(sys.map, PerturbedTent):
        piece = refine(piece, h)
    W = step_batch(sys, piece.vertices)
    W, P = _dedupe(W, np.array(piece.params))
    if W.shape[0] < 2:
        W = np.vstack([W, W])
        P = np.append(P, P)
    return Polyline(W, P, check=False)


# ---------------------------------------------------------------------------
# component forests


@dataclass(frozen=True)
class Component:
    id: int
    depth: int
    parent: Optional[int]
    cell: Tuple[int, int]
    curve: Polyline

    @property
    def interval(self) -> Tuple[float, float]:
        return self.curve.interval

    @property
    def length(self) -> float:
        return self.curve.length


@dataclass
class CurveStats:
    depth: int
    length: float
    r_a: float
    component_count: int


@dataclass
class ComponentForest:
    root: Polyline
    levels: List[List[Component]] = field(default_factory=list)
    stats: List[CurveStats] = field(default_factory=list)
    within_bounds: List[bool] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def components(self, depth: int) -> List[Component]:
        return self.levels[depth]

    def count(self, depth: int) -> int:
        return len(self.levels[depth])

    def total_length(self, depth: int) -> float:
        return float(sum(c.length for c in self.levels[depth]))

    def children(self) -> Dict[int, List[Component]]:
        kids: Dict[int, List[Component]] = {}
        for level in self.levels[1:]:
            for comp in level:
                kids.setdefault(comp.parent, []).append(comp)
        return kids

    def descendants_at(self, comp: Component, depth: int) -> List[Component]:
        kids = self.children()
        frontier = [comp]
        for _ in range(depth - comp.depth):
            frontier = [k for c in frontier for k in kids.get(c.id, [])]
        return frontier

    def to_rows(self) -> List[dict]:
        """Flat records: depth, component id, parent id, cell, length, r_a."""
        rows = []
        for level in self.levels:
            for c in level:
                rows.append({
                    "depth": c.depth, "id": c.id,
                    "parent": -1 if c.parent is None else c.parent,
                    "cell": f"{c.cell[0]}{c.cell[1]}",
                    "length": c.length, "r_a": range_of_angles(c.curve),
                })
        return rows

    def to_dict(self) -> dict:
        """Nested representation, children under their parents."""
        kids = self.children()

        def node(c):
            t0, t1 = c.interval
            return {
                "id": c.id, "depth": c.depth, "cell": list(c.cell),
                "length": c.length, "interval": [t0, t1],
                "vertices": c.curve.vertices.tolist(),
                "children": [node(k) for k in kids.get(c.id, [])],
            }

        return {
            "root": self.root.to_dict(),
            "stats": [vars(s) for s in self.stats],
            "components": [node(c) for c in self.levels[0]] if self.levels else [],
        }


def _reflect_merge(pieces, kink):
    """Reflect consecutive pieces across the fold lines into the first
    piece's cell and join them into one polyline."""
    target = pieces[0][1]
    vs, ps = [], []
    for k, (poly, J) in enumerate(pieces):
        V = np.array(poly.vertices)
        for i in (0, 1):
            if J[i] != target[i]:
                V[:, i] = 2.0 * kink - V[:, i]
        start = 0 if k == 0 else 1
        vs.append(V[start:])
        ps.append(np.asarray(poly.params)[start:])
    V, P = _dedupe(np.concatenate(vs), np.concatenate(ps))
    return Polyline(np.clip(V, 0.0, 1.0), P, check=False), target


def iterate_curve(sys: LatticeSystem, root: Polyline, depth: int, cap: int = DEFAULT_CAP,
                  h: float = DEFAULT_H, normalize: bool = False) -> ComponentForest:
    """Alternate fold splitting and mapping ``depth`` times.

    With ``normalize`` (symmetric maps only) the pieces of each image are
    reflected back into one cell and kept as a single component. For a map
    with f(x) = f(1-x) the reflected curve has the same next image.
    Raises ComponentExplosion, carrying the partial forest, once a level
    holds more than ``cap`` components.
    """
    from .lemmacalc import expansion_bounds

    _require_planar(sys)
    if depth < 0:
        raise PreconditionError("depth must be >= 0")
    if normalize and not (sys.map.symmetric and sys.map.kink == 0.5):
        raise PreconditionError("reflection normalisation needs a map symmetric about 1/2")
    kink = sys.map.kink
    bounds = expansion_bounds(sys, "curve")
    slack = 1e-6 if isinstance(sys.map, PerturbedTent) else 1e-9
    forest = ComponentForest(root=root)
    next_id = 0

    def record(level, k):
        total = float(sum(c.length for c in level))
        r = max((range_of_angles(c.curve) for c in level), default=0.0)
        forest.stats.append(CurveStats(k, total, r, len(level)))
        # vertex rounding contributes an absolute error per edge
        floor = ROUND_FLOOR * sum(c.curve.n_vertices for c in level)
        lo = bounds.e_minus ** k * root.length * (1 - slack) - floor
        hi = bounds.e_plus ** k * root.length * (1 + slack) + floor
        ok = lo <= total <= hi
        if not ok:
            log.warning("depth %d total length %.6g outside [%.6g, %.6g]", k, total, lo, hi)
        forest.within_bounds.append(ok)

    level = []
    for poly, J in split_at_folds(root, kink):
        level.append(Component(next_id, 0, None, J, poly))
        next_id += 1
    forest.levels.append(level)
    record(level, 0)
    for k in range(1, depth + 1):
        new = []
        for comp in forest.levels[-1]:
            pieces = split_at_folds(map_curve(sys, comp.curve, comp.cell, h), kink)
            if normalize and len(pieces) > 1:
                pieces = [_reflect_merge(pieces, kink)]
            for poly, J in pieces:
                new.append(Component(next_id, k, comp.id, J, poly))
                next_id += 1
            if len(new) > cap:
                raise ComponentExplosion(
                    f"depth {k}: more than {cap} components", forest=forest)
        forest.levels.append(new)
        record(new, k)
    return forest


def range_of_angles(curve: Polyline) -> float:
    """Largest distance between two unit edge tangents (orientation kept)."""
    U = curve.tangents
    n = U.shape[0]
    if n == 1:
        return 0.0
    if n <= 512:
        D = U[:, None, :] - U[None, :, :]
        return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", D, D))))
    # The farthest tangent from u is the one closest to -u on the circle.
    th = np.sort(np.arctan2(U[:, 1], U[:, 0]))
    anti = np.where(th < 0, th + math.pi, th - math.pi)
    pos = np.searchsorted(th, anti)
    best = 0.0
    for j in (pos % n, (pos - 1) % n):
        d = np.abs(th - th[j])
        d = np.minimum(d, 2 * math.pi - d)
        best = max(best, float(np.max(2.0 * np.sin(d / 2.0))))
    return min(best, 2.0)


# ---------------------------------------------------------------------------
# growth dichotomy


@dataclass
class DiagonalHit:
    subcurve: Polyline
    depth: int
    line: str  # "diagonal" or "antidiagonal"
    kind: str = "DiagonalHit"


@dataclass
class Grown:
    subcurve: Polyline
    depth: int
    factor: float
    kind: str = "Grown"


@dataclass
class Fail:
    report: dict
    kind: str = "Fail"


def meets_line(curve: Polyline, which: str) -> bool:
    """Whether the polyline touches {x1 = x2} or {x1 + x2 = 1}."""
    V = curve.vertices
    g = V[:, 0] - V[:, 1] if which == "diagonal" else V[:, 0] + V[:, 1] - 1.0
    s = np.sign(g)
    return bool(np.any(s == 0) or np.any(s[:-1] * s[1:] < 0))


def _first_hit(pieces):
    for poly, _ in pieces:
        for which in ("diagonal", "antidiagonal"):
            if meets_line(poly, which):
                return poly, which
    return None


def growth_exponent(lam: float) -> float:
    """e = lam^2 / (lam + 1) - 1."""
    return lam * lam / (lam + 1.0) - 1.0


def growth_step(sys: LatticeSystem, curve: Polyline, delta1: float = DELTA1, tol: float = 1e-6,
                bend: float = 1.0, h: float = DEFAULT_H):
    """One round of the growth dichotomy for a short single-cell curve.

    Looks at T(curve) and, if needed, T^2(curve). Returns DiagonalHit when a
    piece touches the diagonal or the antidiagonal, Grown when a single-cell
    piece is at least (1 + e - tol) times longer than ``curve``, and Fail
    otherwise. ``lam`` in e is the smallest curve expansion of the system,
    2(1 - 2c) for the standard tent.
    """
    from .lemmacalc import expansion_bounds

    _require_planar(sys)
    kink = sys.map.kink
    pieces0 = split_at_folds(curve, kink)
    if len(pieces0) != 1:
        raise PreconditionError("growth_step needs a curve inside one cell")
    if curve.length < delta1 * (1 - 1e-12):
        raise PreconditionError(f"curve length {curve.length:.3g} below delta1 = {delta1:.3g}")
    if isinstance(sys.map, PerturbedTent):
        if range_of_angles(curve) > bend * curve.length:
            raise PreconditionError("curve is too bent for the growth step")
    elif curve.slope_class is None:
        raise PreconditionError("tent growth step needs a slope +-1 curve")
    lam = expansion_bounds(sys, "curve").e_minus
    e = growth_exponent(lam)
    need = (1.0 + e - tol) * curve.length
    hit = _first_hit(pieces0)
    if hit:
        return DiagonalHit(hit[0], 0, hit[1])
    levels = [pieces0]
    for d in (1, 2):
        nxt = []
        for poly, J in levels[-1]:
            nxt.extend(split_at_folds(map_curve(sys, poly, J, h), kink))
        levels.append(nxt)
        hit = _first_hit(nxt)
        if hit:
            return DiagonalHit(hit[0], d, hit[1])
        best = max(nxt, key=lambda pj: pj[0].length)[0]
        if best.length >= need:
            return Grown(best, d, best.length / curve.length)
    return Fail({
        "e": e, "lambda": lam, "length": curve.length,
        "levels": [[(p.length, J) for p, J in lev] for lev in levels],
        "pieces": levels,
    })


# ---------------------------------------------------------------------------
# pullback into the diagonal neighbourhood


def _strip_params(curve: Polyline, eps: float) -> List[Tuple[float, float]]:
    """Root-parameter intervals of the part of ``curve`` with dist <= eps."""
    V, P = curve.vertices, curve.params
    w = eps * math.sqrt(2.0)
    g = V[:, 0] - V[:, 1]
    out: List[Tuple[float, float]] = []
    for k in range(g.size - 1):
        g0, g1 = g[k], g[k + 1]
        if g0 == g1:
            if abs(g0) > w:
                continue
            ta, tb = 0.0, 1.0
        else:
            lo, hi = sorted(((-w - g0) / (g1 - g0), (w - g0) / (g1 - g0)))
            ta, tb = max(lo, 0.0), min(hi, 1.0)
            if ta > tb:
                continue
        pa = P[k] + ta * (P[k + 1] - P[k])
        pb = P[k] + tb * (P[k + 1] - P[k])
        a, b = min(pa, pb), max(pa, pb)
        if out and a <= out[-1][1] and b >= out[-1][0]:
            out[-1] = (min(out[-1][0], a), max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _union(intervals):
    iv = sorted(intervals)
    merged = []
    for a, b in iv:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


def _subtract(iv, claimed):
    """Parts of the interval ``iv`` not covered by the sorted disjoint list."""
    a, b = iv
    out = []
    for c0, c1 in claimed:
        if c1 <= a:
            continue
        if c0 >= b:
            break
        if c0 > a:
            out.append((a, c0))
        a = max(a, c1)
        if a >= b:
            break
    if a < b:
        out.append((a, b))
    return out


def diagonal_pullback(forest: ComponentForest, eps: float) -> List[Tuple[Tuple[float, float], int]]:
    """Root intervals that land in G_eps, each tagged with its first-hit depth.

    Depths are scanned in order and a root parameter is credited to the first
    depth at which it reaches G_eps, so the returned intervals are disjoint.
    """
    claimed: List[Tuple[float, float]] = []
    hits = []
    for k, level in enumerate(forest.levels):
        fresh = []
        for comp in level:
            for iv in _strip_params(comp.curve, eps):
                fresh.extend(_subtract(iv, claimed))
        fresh = [iv for iv in _union(fresh) if iv[1] > iv[0]]
        hits.extend((iv, k) for iv in fresh)
        claimed = _union(claimed + fresh)
    return hits


@dataclass
class PullbackScan:
    eps: float
    root_measure: float
    per_depth: np.ndarray  # root measure first reaching G_eps at each depth
    remaining_edges: np.ndarray  # unclaimed edge count after each depth

    @property
    def cumulative_fraction(self) -> np.ndarray:
        return np.cumsum(self.per_depth) / self.root_measure


def _split_edges(A, B, TA, TB, kink):
    """Vectorised fold splitting of independent edges (at most 3 pieces each)."""
    D = B - A
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (kink - A) / D
    sa = np.sign(A - kink)
    sb = np.sign(B - kink)
    cross = (sa * sb) < 0
    t = np.where(cross, t, np.inf)
    lo = np.minimum(t[:, 0], t[:, 1])
    hi = np.maximum(t[:, 0], t[:, 1])
    lo_axis = np.where(t[:, 0] <= t[:, 1], 0, 1)
    same = np.isfinite(hi) & (np.where(np.isfinite(hi), hi, 0.0) - np.where(np.isfinite(lo), lo, 0.0) <= 1e-15)
    hi = np.where(same, np.inf, hi)

    def point(tt, axis, both):
        P = A + np.where(np.isfinite(tt), tt, 0.0)[:, None] * D
        ok = np.isfinite(tt)
        rows = np.nonzero(ok)[0]
        P[rows, axis[rows]] = kink
        rb = np.nonzero(ok & both)[0]
        P[rb, :] = kink
        return P

    no = np.zeros(A.shape[0], dtype=bool)
    P_lo = point(lo, lo_axis, same)
    P_hi = point(hi, 1 - lo_axis, no)
    T_lo = TA + np.where(np.isfinite(lo), lo, 0.0) * (TB - TA)
    T_hi = TA + np.where(np.isfinite(hi), hi, 0.0) * (TB - TA)
    has_lo = np.isfinite(lo)
    has_hi = np.isfinite(hi)
    # first sub-edge: A -> (P_lo or B)
    e1_end = np.where(has_lo[:, None], P_lo, B)
    t1_end = np.where(has_lo, T_lo, TB)
    parts = [(A, e1_end, TA, t1_end)]
    # middle: P_lo -> (P_hi or B)
    m = has_lo
    parts.append((P_lo[m], np.where(has_hi[m][:, None], P_hi[m], B[m]),
                  T_lo[m], np.where(has_hi[m], T_hi[m], TB[m])))
    m = has_hi
    parts.append((P_hi[m], B[m], T_hi[m], TB[m]))
    A2 = np.concatenate([p[0] for p in parts])
    B2 = np.concatenate([p[1] for p in parts])
    TA2 = np.concatenate([p[2] for p in parts])
    TB2 = np.concatenate([p[3] for p in parts])
    keep = np.hypot(*(B2 - A2).T) > 0
    return A2[keep], B2[keep], TA2[keep], TB2[keep]


def _strip_cut(A, B, TA, TB, eps):
    """Remove the part of each edge inside |x1 - x2| <= eps*sqrt(2).

    Returns (claimed root measure, outside edges)."""
    w = eps * math.sqrt(2.0)
    g0 = A[:, 0] - A[:, 1]
    g1 = B[:, 0] - B[:, 1]
    dg = g1 - g0
    flat = dg == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        # an edge parallel to the diagonal is either wholly inside or wholly outside
        ta = np.where(flat, np.where(np.abs(g0) <= w, -np.inf, np.inf), (-w - g0) / dg)
        tb = np.where(flat, np.inf, (w - g0) / dg)
    lo = np.clip(np.minimum(ta, tb), 0.0, 1.0)
    hi = np.clip(np.maximum(ta, tb), 0.0, 1.0)
    empty = ~(np.minimum(ta, tb) <= 1.0) | ~(np.maximum(ta, tb) >= 0.0) | (lo >= hi)
    lo = np.where(empty, 1.0, lo)
    hi = np.where(empty, 1.0, hi)
    claimed = float(np.sum((hi - lo) * np.abs(TB - TA)))
    D = B - A
    dT = TB - TA
    # outside part before lo and after hi
    m1 = lo > 0
    m2 = (hi < 1) & ~empty
    A_out = np.concatenate([A[m1], A[m2] + hi[m2, None] * D[m2]])
    B_out = np.concatenate([A[m1] + lo[m1, None] * D[m1], B[m2]])
    TA_out = np.concatenate([TA[m1], TA[m2] + hi[m2] * dT[m2]])
    TB_out = np.concatenate([TA[m1] + lo[m1] * dT[m1], TB[m2]])
    return claimed, A_out, B_out, TA_out, TB_out


def pullback_scan(sys: LatticeSystem, root: Polyline, depth: int, eps: float,
                  cap: int = 5_000_000) -> PullbackScan:
    """First-hit pullback measure per depth, pruning claimed parts.

    Once a part of the curve has entered G_eps it is removed from further
    iteration, so deep scans only carry the unclaimed remainder. The curve is
    handled as independent edges; for tent maps this is exact, since every
    operation is edge-local and edges stay straight. Tent variants only.
    """
    _require_planar(sys)
    if isinstance(sys.map, PerturbedTent):
        raise PreconditionError("pullback_scan supports tent maps only")
    kink = sys.map.kink
    V, P = root.vertices, root.params
    A, B, TA, TB = V[:-1].copy(), V[1:].copy(), P[:-1].copy(), P[1:].copy()
    per = np.zeros(depth + 1)
    remaining = np.zeros(depth + 1, dtype=np.int64)
    for k in range(depth + 1):
        A, B, TA, TB = _split_edges(A, B, TA, TB, kink)
        got, A, B, TA, TB = _strip_cut(A, B, TA, TB, eps)
        per[k] = got
        remaining[k] = A.shape[0]
        if A.shape[0] > cap:
            raise ComponentExplosion(f"depth {k}: more than {cap} unclaimed edges")
        if k < depth and A.shape[0]:
            A = step_batch(sys, A)
            B = step_batch(sys, B)
    total = float(np.abs(np.diff(P)).sum())
    return PullbackScan(eps, total, per, remaining)


# ---------------------------------------------------------------------------
# regular points


@dataclass
class RegularPointResult:
    measured: float
    bound: float
    n: int
    d_syn: float
    samples: int
    slack: float

    @property
    def ok(self) -> bool:
        return self.measured >= self.bound - self.slack

    def __iter__(self):
        yield self.measured
        yield self.bound


def regular_point_ratio(sys: LatticeSystem, segment: Polyline, N: Optional[int] = None,
                        gamma0: float = 2.0 ** -12, delta2: float = DELTA2,
                        M: int = 100_000, return_mask: bool = False):
    """Fraction of N-regular points on a slope +1 segment, with its lower bound.

    A point x is N-regular if T^j(x) avoids G~ at radius (2(1-2c))^j d for
    j = 1..N, where d is the segment's distance to the diagonal and
    G~_r = {dist <= r, |x1 + x2 - 1| <= r sqrt(2)}. The default N is
    floor(log_{2(1-2c)}(gamma0 / d)), floored at 0. The lower bound is
    1 - sum_j (2(1-2c))^j d / delta2.
    """
    _require_planar(sys)
    if not isinstance(sys.map, StandardTent):
        raise PreconditionError("regular_point_ratio needs the standard tent")
    lam = 2.0 * (1.0 - 2.0 * sys.c)
    if lam <= 1.0:
        raise PreconditionError("regular points need c < 1/4")
    if segment.slope_class != 1:
        raise PreconditionError("segment must have slope +1")
    if len(split_at_folds(segment)) != 1:
        raise PreconditionError("segment must lie in one cell")
    if segment.length < delta2 * (1 - 1e-12):
        raise PreconditionError(f"segment shorter than delta2 = {delta2}")
    if meets_line(segment, "diagonal"):
        raise PreconditionError("segment touches the diagonal")
    a, b = segment.vertices[0], segment.vertices[-1]
    d = float(abs(a[0] - a[1]) / math.sqrt(2.0))
    if N is None:
        N = max(0, int(math.floor(math.log(gamma0 / d) / math.log(lam))))
    t = (np.arange(M) + 0.5) / M
    X = a + t[:, None] * (b - a)
    regular = np.ones(M, dtype=bool)
    Y = X
    for j in range(1, N + 1):
        Y = step_batch(sys, Y)
        r = lam ** j * d
        near_diag = np.abs(Y[:, 0] - Y[:, 1]) / math.sqrt(2.0) <= r * (1 + 1e-9)
        near_anti = np.abs(Y[:, 0] + Y[:, 1] - 1.0) <= r * math.sqrt(2.0)
        regular &= ~(near_diag & near_anti)
    bound = 1.0 - sum(lam ** j for j in range(1, N + 1)) * d / delta2
    res = RegularPointResult(float(regular.mean()), float(bound), N, d, M, 3.0 / math.sqrt(M))
    if not res.ok:
        log.warning("regular-point ratio %.6f below bound %.6f", res.measured, res.bound)
    if return_mask:
        return res, X, regular
    return res


# ---------------------------------------------------------------------------
# audits and sampling helpers


def random_segment(rng: np.random.Generator, length: float, slope: Optional[int] = None,
                   single_cell: bool = False, kink: float = 0.5) -> Polyline:
    """Uniformly placed straight segment of slope +-1 and given length."""
    sgn = slope if slope is not None else (1 if rng.random() < 0.5 else -1)
    u = (_DIAG if sgn == 1 else _ANTI) * length
    for _ in range(10_000):
        a = rng.random(2)
        if single_cell:
            J = (a >= kink).astype(int)
            lo = np.where(J == 1, kink, 0.0)
            hi = np.where(J == 1, 1.0, kink)
            start = lo + (hi - lo) * rng.random(2)
        else:
            start = a
        end = start + u
        if np.all(end >= 0) and np.all(end <= 1):
            if single_cell and not np.array_equal(end >= kink, start >= kink):
                continue
            return Polyline([start, end])
    raise PreconditionError("could not place a segment of that length")


def good_subtree_counts(forest: ComponentForest, m0: int = 6, delta1: float = DELTA1) -> List[int]:
    """Leaf counts of depth-m0 subtrees rooted at components of length <= delta1."""
    kids = forest.children()
    counts = []
    for d in range(0, forest.depth - m0 + 1):
        for comp in forest.levels[d]:
            if comp.length > delta1:
                continue
            frontier = [comp]
            for _ in range(m0):
                frontier = [k for c in frontier for k in kids.get(c.id, [])]
            counts.append(len(frontier))
    return counts


@dataclass
class FlatnessReport:
    a_theory: float
    a_hat: float
    k_hat: float
    steps: int


def flatness_audit(sys: LatticeSystem, forest: ComponentForest) -> FlatnessReport:
    """Measure the flatness recursion along non-folding steps.

    For a step whose parent maps to a single child, the recursion reads
    r_a(child) <= a M(parent) + (1 + K) r_a(parent). ``a_theory`` is the
    sup of ||D(JT)|| = ||I + cA|| sup|f''|. ``a_hat`` is the largest
    r_a(child)/M(parent) over straight parents, ``k_hat`` the smallest K
    consistent with ``a_theory`` over bent parents.
    """
    kids = forest.children()
    a_theory = float(np.linalg.norm(sys.matrix, 2) * sys.map.sup_d2)
    a_hat, k_hat, steps = 0.0, 0.0, 0
    for level in forest.levels[:-1]:
        for comp in level:
            ch = kids.get(comp.id, [])
            if len(ch) != 1:
                continue
            steps += 1
            r0 = range_of_angles(comp.curve)
            r1 = range_of_angles(ch[0].curve)
            if r0 <= 1e-14:
                a_hat = max(a_hat, r1 / comp.length)
            else:
                k_hat = max(k_hat, (r1 - a_theory * comp.length) / r0 - 1.0)
    return FlatnessReport(a_theory, a_hat, k_hat, steps)
