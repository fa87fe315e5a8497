"""Convex regions under the multi-node tent lattice.

Regions in dimension m <= 3 are exact vertex hulls; clipping, images and
volumes are computed from vertices. For m >= 4 a region is a halfspace
system together with a seeded uniform sample cloud. Both transform exactly
under the affine branch of a cell: halfspaces by the inverse map, the cloud
pointwise (an affine image of a uniform sample is uniform). Volumes there
are Monte Carlo estimates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, Delaunay, QhullError
from scipy.stats import beta

from .errors import CellMismatchError, PreconditionError
from .maps import GeneralTent, LatticeSystem, StandardTent

EXACT_MAX_M = 3
CONTAIN_TOL = 1e-12
EMPTY_REL = 1e-14
DEFAULT_CLOUD = 20_000
CONFIDENCE = 0.99


def clopper_pearson(k: int, n: int, confidence: float = CONFIDENCE) -> Tuple[float, float]:
    """Two-sided exact binomial confidence interval for k successes in n."""
    alpha = 1.0 - confidence
    lo = 0.0 if k == 0 else float(beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def _hull(points):
    try:
        return ConvexHull(points)
    except (QhullError, ValueError):
        return None


class ConvexRegion:
    """Convex polytope in [0,1]^m.

    Use :meth:`from_points`, :meth:`box` or :meth:`simplex` to build one.
    For m <= 3 ``vertices`` holds the hull vertices; for m >= 4 the region is
    ``(H, h)`` with H x <= h, a sample cloud and a volume estimate.
    """

    def __init__(self, m: int, vertices=None, H=None, h=None, cloud=None,
                 volume_estimate: Optional[float] = None, seed: Optional[int] = None):
        self.m = int(m)
        if self.m < 2:
            raise PreconditionError("regions need m >= 2")
        self.vertices = vertices
        self.H = H
        self.h = h
        self.cloud = cloud
        self._volume = volume_estimate
        self.seed = seed
        self._hull = None
        if self.exact:
            if vertices is None:
                raise PreconditionError("exact regions need vertices")
            hull = _hull(vertices)
            if hull is None:
                raise PreconditionError("degenerate region (no interior)")
            self._hull = hull
            self.vertices = np.ascontiguousarray(vertices[hull.vertices], dtype=float)
            self.H = hull.equations[:, :-1]
            self.h = -hull.equations[:, -1]
            self._volume = None

    @property
    def exact(self) -> bool:
        return self.m <= EXACT_MAX_M

    # constructors -------------------------------------------------------

    @classmethod
    def from_points(cls, points) -> "ConvexRegion":
        P = np.asarray(points, dtype=float)
        if P.ndim != 2:
            raise PreconditionError("points must be an (n, m) array")
        if P.shape[1] > EXACT_MAX_M:
            raise PreconditionError("vertex regions are supported for m <= 3; use ConvexRegion.box")
        if np.any(P < -CONTAIN_TOL) or np.any(P > 1 + CONTAIN_TOL):
            raise PreconditionError("region must lie in [0,1]^m")
        return cls(P.shape[1], vertices=np.clip(P, 0.0, 1.0))

    @classmethod
    def box(cls, lo, hi, n_cloud: int = DEFAULT_CLOUD, seed: int = 0) -> "ConvexRegion":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        m = lo.size
        if np.any(hi <= lo) or np.any(lo < 0) or np.any(hi > 1):
            raise PreconditionError("box needs 0 <= lo < hi <= 1")
        if m <= EXACT_MAX_M:
            corners = np.array(list(itertools.product(*zip(lo, hi))))
            return cls(m, vertices=corners)
        H = np.vstack([np.eye(m), -np.eye(m)])
        h = np.concatenate([hi, -lo])
        rng = np.random.default_rng(seed)
        cloud = lo + (hi - lo) * rng.random((n_cloud, m))
        return cls(m, H=H, h=h, cloud=cloud, volume_estimate=float(np.prod(hi - lo)), seed=seed)

    @classmethod
    def cube(cls, m: int, **kw) -> "ConvexRegion":
        return cls.box(np.zeros(m), np.ones(m), **kw)

    @classmethod
    def simplex(cls, m: int) -> "ConvexRegion":
        return cls.from_points(np.vstack([np.zeros(m), np.eye(m)]))

    # queries ------------------------------------------------------------

    def contains(self, x, tol: float = CONTAIN_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        scale = np.linalg.norm(self.H, axis=1)
        return bool(np.all(self.H @ x <= self.h + tol * scale))

    def inside_mask(self, X, tol: float = 0.0) -> np.ndarray:
        scale = np.linalg.norm(self.H, axis=1)
        return np.all(X @ self.H.T <= self.h + tol * scale, axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Independent uniform points: Delaunay simplices weighted by volume
        (m <= 3) or rejection from the bounding box (m >= 4)."""
        if not self.exact:
            lo, hi = _bounding_box(self.H, self.h, self.m)
            out, have = [], 0
            while have < n:
                X = lo + (hi - lo) * rng.random((max(2 * (n - have), 1024), self.m))
                X = X[self.inside_mask(X)]
                out.append(X)
                have += X.shape[0]
            return np.vstack(out)[:n]
        tri = Delaunay(self.vertices)
        S = self.vertices[tri.simplices]  # (k, m+1, m)
        vols = np.abs(np.linalg.det(S[:, 1:] - S[:, :1]))
        pick = rng.choice(len(vols), size=n, p=vols / vols.sum())
        w = rng.dirichlet(np.ones(self.m + 1), size=n)
        return np.einsum("nk,nkd->nd", w, S[pick])

    def to_dict(self) -> dict:
        if self.exact:
            return {"m": self.m, "vertices": self.vertices.tolist()}
        return {"m": self.m, "H": self.H.tolist(), "h": self.h.tolist(),
                "volume_estimate": self._volume, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvexRegion":
        if "vertices" in d:
            return cls.from_points(d["vertices"])
        raise PreconditionError("only vertex regions can be loaded from JSON")

    def __repr__(self):
        if self.exact:
            return f"ConvexRegion(m={self.m}, vertices={len(self.vertices)})"
        return f"ConvexRegion(m={self.m}, halfspaces={len(self.h)}, cloud={len(self.cloud)})"


# ---------------------------------------------------------------------------
# volumes


def _polygon_area(V) -> float:
    hull = _hull(V)
    if hull is None:
        return 0.0
    P = V[hull.vertices]  # counter-clockwise
    x, y = P[:, 0], P[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _polyhedron_volume(V) -> float:
    hull = _hull(V)
    if hull is None:
        return 0.0
    c = V[hull.vertices].mean(axis=0)
    T = V[hull.simplices] - c
    return float(np.abs(np.linalg.det(T)).sum() / 6.0)


def _bounding_box(H, h, m):
    lo, hi = np.empty(m), np.empty(m)
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        r0 = linprog(e, A_ub=H, b_ub=h, bounds=[(0, 1)] * m, method="highs")
        r1 = linprog(-e, A_ub=H, b_ub=h, bounds=[(0, 1)] * m, method="highs")
        if r0.status != 0 or r1.status != 0:
            raise PreconditionError("halfspace system is infeasible")
        lo[i], hi[i] = r0.x[i], r1.x[i]
    return lo, hi


def volume(region: ConvexRegion, n_mc: int = 200_000, seed: int = 0, return_error: bool = False):
    """Volume: shoelace (m = 2), centroid tetrahedra (m = 3), bounding-box
    Monte Carlo with its standard error (m >= 4)."""
    if region.m == 2:
        v, err = _polygon_area(region.vertices), 0.0
    elif region.m == 3:
        v, err = _polyhedron_volume(region.vertices), 0.0
    else:
        lo, hi = _bounding_box(region.H, region.h, region.m)
        rng = np.random.default_rng(seed)
        X = lo + (hi - lo) * rng.random((n_mc, region.m))
        p = float(region.inside_mask(X).mean())
        boxv = float(np.prod(hi - lo))
        v, err = p * boxv, boxv * math.sqrt(max(p * (1 - p), 0.0) / n_mc)
    return (v, err) if return_error else v


def tracked_volume(region: ConvexRegion) -> float:
    """Exact volume for m <= 3, else the estimate carried along with the cloud."""
    return volume(region) if region.exact else float(region._volume)


# ---------------------------------------------------------------------------
# clipping


def _clip_vertices(region: ConvexRegion, axis: int, value: float, keep_below: bool):
    """Points spanning region ∩ {x_axis <= value} (or >=), or None if too few.

    Kept vertices plus the crossings of every hull edge with the plane; the
    hull of these is the clipped polytope.
    """
    V = region.vertices
    s = (V[:, axis] - value) * (1.0 if keep_below else -1.0)
    hull = region._hull
    pos = {vid: k for k, vid in enumerate(hull.vertices)}
    edges = set()
    for simplex in hull.simplices:
        for a, b in itertools.combinations(simplex, 2):
            edges.add((pos[min(a, b)], pos[max(a, b)]))
    pts = [V[s <= 0]]
    for ka, kb in edges:
        if s[ka] * s[kb] < 0:
            t = s[ka] / (s[ka] - s[kb])
            p = V[ka] + t * (V[kb] - V[ka])
            p[axis] = value
            pts.append(p[None, :])
    P = np.vstack(pts)
    if P.shape[0] <= region.m:
        return None
    return P


def _has_interior(H, h, m, tol: float = 1e-12) -> bool:
    """Whether {H x <= h} contains a ball of radius > tol (Chebyshev LP)."""
    norms = np.linalg.norm(H, axis=1)
    c = np.zeros(m + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.hstack([H, norms[:, None]]), b_ub=h,
                  bounds=[(None, None)] * m + [(0, None)], method="highs")
    return res.status == 0 and -res.fun > tol


def clip_to_cells(region: ConvexRegion, kink: float = 0.5) -> List[Tuple[Tuple[int, ...], ConvexRegion]]:
    """Split a region by the planes x_i = kink into single-cell pieces.

    Pieces without interior are omitted. For m >= 4 a piece is reported when
    its halfspace system has interior (exact LP test), with its cloud
    restricted accordingly.
    """
    pieces = [((), region)]
    parent_vol = tracked_volume(region)
    for axis in range(region.m):
        nxt = []
        for J, reg in pieces:
            for bit in (0, 1):
                if reg.exact:
                    pts = _clip_vertices(reg, axis, kink, keep_below=(bit == 0))
                    if pts is None:
                        continue
                    try:
                        child = ConvexRegion(reg.m, vertices=pts)
                    except PreconditionError:
                        continue
                    if tracked_volume(child) <= EMPTY_REL * parent_vol:
                        continue
                else:
                    a = np.zeros(reg.m)
                    a[axis] = 1.0 if bit == 0 else -1.0
                    b = kink if bit == 0 else -kink
                    H = np.vstack([reg.H, a])
                    h = np.append(reg.h, b)
                    if not _has_interior(H, h, reg.m):
                        continue
                    mask = (reg.cloud @ a) <= b
                    frac = float(mask.mean())
                    child = ConvexRegion(reg.m, H=H, h=h, cloud=reg.cloud[mask],
                                         volume_estimate=reg._volume * frac, seed=reg.seed)
                nxt.append((J + (bit,), child))
        pieces = nxt
    return pieces


def region_cell(region: ConvexRegion, kink: float = 0.5) -> Tuple[int, ...]:
    """The closed cell containing the region; PreconditionError if none."""
    if region.exact:
        V = region.vertices
        J = []
        for i in range(region.m):
            if np.all(V[:, i] <= kink):
                J.append(0)
            elif np.all(V[:, i] >= kink):
                J.append(1)
            else:
                raise PreconditionError(f"region straddles x_{i + 1} = {kink}")
        return tuple(J)
    pieces = clip_to_cells(region, kink)
    if len(pieces) != 1:
        raise PreconditionError("region is not inside a single cell")
    return pieces[0][0]


# ---------------------------------------------------------------------------
# images


def branch_affine(sys: LatticeSystem, J) -> Tuple[np.ndarray, np.ndarray]:
    """(L, t) with T(x) = L x + t on the closed cell J (tent maps only)."""
    if not isinstance(sys.map, (StandardTent, GeneralTent)):
        raise PreconditionError("affine cell images need a tent map")
    k = sys.map.kink
    d = np.array([float(sys.map.branch_derivative(k, bool(b))) for b in J])
    fk = float(sys.map(k))
    off = fk - d * k
    return sys.matrix * d[None, :], sys.matrix @ off


def map_region(sys: LatticeSystem, piece: ConvexRegion, J) -> ConvexRegion:
    """Image of a single-cell piece under the affine branch of cell J."""
    J = tuple(int(b) for b in J)
    if len(J) != piece.m or sys.m != piece.m:
        raise PreconditionError("cell index, region and system dimensions disagree")
    L, t = branch_affine(sys, J)
    k = sys.map.kink
    if piece.exact:
        V = piece.vertices
        for i, b in enumerate(J):
            if (b and np.any(V[:, i] < k)) or (not b and np.any(V[:, i] > k)):
                raise CellMismatchError(f"region does not lie in closed cell {J}")
        W = np.clip(V @ L.T + t, 0.0, 1.0)
        return ConvexRegion(piece.m, vertices=W)
    for i, b in enumerate(J):
        a = np.zeros(piece.m)
        a[i] = -1.0 if b else 1.0
        bound = -k if b else k
        H = np.vstack([piece.H, -a])
        h = np.append(piece.h, -bound)
        if _has_interior(H, h, piece.m):
            raise CellMismatchError(f"region does not lie in closed cell {J}")
    Linv = np.linalg.inv(L)
    H = piece.H @ Linv
    h = piece.h + H @ t
    cloud = np.clip(piece.cloud @ L.T + t, 0.0, 1.0)
    vol = piece._volume * abs(float(np.linalg.det(L)))
    return ConvexRegion(piece.m, H=H, h=h, cloud=cloud, volume_estimate=vol, seed=piece.seed)


# ---------------------------------------------------------------------------
# centre-point lemma


@dataclass
class AllCellsHit:
    center_inside: bool
    kind: str = "AllCellsHit"


@dataclass
class SomeCellMissed:
    missed: List[Tuple[int, ...]]
    kind: str = "SomeCellMissed"


def center_point_check(sys: LatticeSystem, region: ConvexRegion):
    """Map a single-cell region and test whether the image meets every cell;
    if it does, report whether the centre (1/2, ..., 1/2) lies in it."""
    J = region_cell(region, sys.map.kink)
    image = map_region(sys, region, J)
    hit = {Jc for Jc, _ in clip_to_cells(image, 0.5)}
    allc = set(itertools.product((0, 1), repeat=region.m))
    if hit == allc:
        return AllCellsHit(image.contains(np.full(region.m, 0.5)))
    return SomeCellMissed(sorted(allc - hit))


def random_region(rng: np.random.Generator, m: int, n_points: Optional[int] = None,
                  cell=None, scale: Optional[float] = None) -> ConvexRegion:
    """Hull of random points in one cell (random cell unless given).

    ``scale`` shrinks the point cloud around a random centre inside the cell.
    """
    if cell is None:
        cell = tuple(int(b) for b in rng.integers(0, 2, m))
    lo = np.array([0.5 if b else 0.0 for b in cell])
    k = n_points or int(rng.integers(m + 1, m + 8))
    while True:
        if scale is None:
            P = lo + 0.5 * rng.random((k, m))
        else:
            c = lo + 0.5 * rng.random(m)
            P = np.clip(c + scale * (rng.random((k, m)) - 0.5), lo, lo + 0.5)
        try:
            return ConvexRegion.from_points(P)
        except PreconditionError:
            continue


@dataclass
class CenterAudit:
    n: int
    all_hit: int
    missed: int
    counterexamples: List[dict] = field(default_factory=list)
    eps_checks: List["EpsRatio"] = field(default_factory=list)

    @property
    def eps_failures(self) -> int:
        return sum(not r.ok for r in self.eps_checks)


def center_point_audit(sys: LatticeSystem, n: int, seed: int = 0, scale: Optional[float] = None,
                       eps: Optional[float] = None) -> CenterAudit:
    """Run center_point_check on ``n`` random single-cell regions.

    With ``eps`` given, every image that hits all cells and contains the
    centre (a convex region, being an affine image) also goes through
    :func:`eps_ratio_check`.
    """
    rng = np.random.default_rng(seed)
    audit = CenterAudit(n, 0, 0)
    centre = np.full(sys.m, 0.5)
    for i in range(n):
        reg = random_region(rng, sys.m, scale=scale)
        out = center_point_check(sys, reg)
        if isinstance(out, AllCellsHit):
            audit.all_hit += 1
            if not out.center_inside:
                audit.counterexamples.append({"index": i, "region": reg.to_dict()})
            elif eps is not None:
                image = map_region(sys, reg, region_cell(reg, sys.map.kink))
                if image.contains(centre):
                    audit.eps_checks.append(eps_ratio_check(image, eps, seed=seed + i))
        else:
            audit.missed += 1
    return audit


def best_cell_walk(sys: LatticeSystem, region: ConvexRegion, steps: int):
    """Repeatedly map the region and keep its largest cell piece.

    Returns the list of (step, cell, volume, outcome of center_point_check).
    """
    out = []
    reg = region
    for n in range(steps):
        res = center_point_check(sys, reg)
        J = region_cell(reg, sys.map.kink)
        image = map_region(sys, reg, J)
        pieces = clip_to_cells(image, sys.map.kink)
        Jb, reg = max(pieces, key=lambda p: tracked_volume(p[1]))
        out.append((n, Jb, tracked_volume(reg), res))
    return out


# ---------------------------------------------------------------------------
# epsilon-neighbourhood of the diagonal


def _dist_to_diagonal(X) -> np.ndarray:
    m = X.shape[1]
    Y = X - X.mean(axis=1, keepdims=True)
    return np.sqrt(np.sum(Y * Y, axis=1))


def _strip_polygon(V, w):
    """Vertices of polygon ∩ {|x1 - x2| <= w}, by two halfplane clips."""
    P = V
    for sgn in (1.0, -1.0):
        g = sgn * (P[:, 0] - P[:, 1]) - w
        hull = _hull(P)
        if hull is None:
            return None
        P = P[hull.vertices]
        g = sgn * (P[:, 0] - P[:, 1]) - w
        out = []
        n = len(P)
        for i in range(n):
            a, b = P[i], P[(i + 1) % n]
            ga, gb = g[i], g[(i + 1) % n]
            if ga <= 0:
                out.append(a)
            if ga * gb < 0:
                out.append(a + ga / (ga - gb) * (b - a))
        if len(out) < 3:
            return None
        P = np.array(out)
    return P


@dataclass
class EpsRatio:
    measured: float
    bound: float
    slack: float
    samples: int  # 0 for exact evaluation
    confidence: float

    @property
    def ok(self) -> bool:
        return self.measured >= self.bound - self.slack

    def __iter__(self):
        yield self.measured
        yield self.bound


def eps_ratio_check(region: ConvexRegion, eps: float, seed: int = 0, n_start: int = 100_000,
                    n_max: int = 10_000_000, require_center: bool = True) -> EpsRatio:
    """vol(region ∩ G_eps) / vol(region) against m^(-m/2) eps^m.

    m = 2 is exact (clipping to |x1 - x2| <= eps sqrt 2). Otherwise a Monte
    Carlo fraction with a 99% Clopper-Pearson interval; the slack is the gap
    from the estimate to the upper end. The sample count doubles from
    ``n_start`` until the lower end clears the bound or the slack drops to
    10% of the bound (capped at ``n_max``).
    """
    m = region.m
    if require_center and not region.contains(np.full(m, 0.5)):
        raise PreconditionError("eps_ratio_check needs the centre inside the region")
    bound = m ** (-m / 2.0) * eps ** m
    if m == 2:
        P = _strip_polygon(region.vertices, eps * math.sqrt(2.0))
        inner = 0.0 if P is None else _polygon_area(P)
        return EpsRatio(inner / volume(region), bound, 0.0, 0, 1.0)
    rng = np.random.default_rng(seed)
    n = n_start
    k_tot, n_tot = 0, 0
    while True:
        X = region.sample(n - n_tot, rng)
        k_tot += int(np.count_nonzero(_dist_to_diagonal(X) <= eps))
        n_tot = n
        p = k_tot / n_tot
        lo, hi = clopper_pearson(k_tot, n_tot)
        if lo >= bound or hi - p <= 0.1 * bound or n >= n_max:
            return EpsRatio(p, bound, hi - p, n_tot, CONFIDENCE)
        n = min(2 * n, n_max)
