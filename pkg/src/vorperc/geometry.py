"""Colouring queries and cell adjacency.

Two substrates: a lattice rasterisation of the colouring (any dimension)
and the exact planar Delaunay graph (``d == 2``), used to cross-check it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from . import _kernels
from .errors import ParameterError, ResourceError, StateError
from .point_process import PointConfiguration, derive_seed

MAX_SITES = 50_000_000
JITTER = 1e-10


class PointLocator:
    """Uniform cell list over a point set, roughly one point per cell."""

    def __init__(self, points: np.ndarray, lo=None, hi=None):
        pts = np.ascontiguousarray(points, dtype=float)
        self.points = pts
        d = pts.shape[1]
        if lo is None:
            lo = pts.min(axis=0) if len(pts) else np.zeros(d)
            hi = pts.max(axis=0) if len(pts) else np.ones(d)
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        span = float(np.max(hi - lo)) if len(pts) else 1.0
        vol = float(np.prod(np.maximum(hi - lo, 1e-12)))
        cs = (vol / max(len(pts), 1)) ** (1.0 / d) if len(pts) else 1.0
        cs = max(cs, span / 4096, 1e-9)
        shape = np.maximum(np.ceil((hi - lo) / cs).astype(np.int64), 1)
        cell = np.clip(np.floor((pts - lo) / cs).astype(np.int64), 0, shape - 1)
        flat = np.ravel_multi_index(tuple(cell.T), tuple(shape)) if len(pts) else np.zeros(0, np.int64)
        self.order = np.argsort(flat, kind="stable").astype(np.int64)
        counts = np.bincount(flat, minlength=int(np.prod(shape)))
        self.start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.lo, self.cs, self.shape = lo, float(cs), shape

    def query(self, queries, excluded=None):
        """Nearest point index and squared distance for every row of ``queries``."""
        q = np.ascontiguousarray(np.atleast_2d(queries), dtype=float)
        if excluded is None:
            excluded = np.zeros(len(self.points), np.bool_)
        return _kernels.nearest_in_cells(self.points, self.order, self.start, self.lo,
                                         self.cs, self.shape, q, excluded)


def locator(config: PointConfiguration) -> PointLocator:
    e = config.window.extent
    return PointLocator(config.points, lo=np.full(config.d, -e), hi=np.full(config.d, e))


def nearest_point(config: PointConfiguration, y) -> int:
    """Index of the point of ``config`` closest to ``y`` (lexicographic tie rule)."""
    if len(config) == 0:
        raise StateError("nearest point of an empty configuration")
    idx, _ = locator(config).query(np.asarray(y, float).reshape(1, -1))
    return int(idx[0])


def color_at(config: PointConfiguration, y) -> bool:
    return bool(config.black[nearest_point(config, y)])


@dataclass
class ColorGrid:
    """Colouring sampled on lattice sites ``h * i`` for ``lo <= i < lo + shape``."""

    h: float
    lo: np.ndarray
    owner: np.ndarray
    color: np.ndarray
    dist2: np.ndarray

    @property
    def shape(self):
        return self.owner.shape

    @property
    def d(self) -> int:
        return self.owner.ndim

    @cached_property
    def coords(self) -> np.ndarray:
        """Site coordinates, shape ``(*shape, d)``."""
        axes = [(self.lo[a] + np.arange(s)) * self.h for a, s in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(np.sum(self.coords ** 2, axis=-1))

    def site_of(self, y) -> tuple:
        """Array index of the lattice site closest to ``y``."""
        i = np.rint(np.asarray(y, float) / self.h).astype(np.int64) - self.lo
        if np.any(i < 0) or np.any(i >= np.asarray(self.shape)):
            raise ParameterError(f"point {y} lies outside the raster")
        return tuple(int(v) for v in i)

    def recolor(self, black: np.ndarray) -> "ColorGrid":
        """Same owners, colours taken from a new per-point colour vector."""
        return ColorGrid(self.h, self.lo, self.owner, black[self.owner], self.dist2)


def _region_bounds(region, d):
    if np.isscalar(region):
        lo, hi = -float(region) * np.ones(d), float(region) * np.ones(d)
    else:
        lo, hi = (np.asarray(v, float) * np.ones(d) for v in region)
    return lo, hi


def lattice_range(region, d, h):
    """Integer lattice bounds ``(lo, shape)`` of the sites inside ``region``."""
    lo, hi = _region_bounds(region, d)
    ilo = np.ceil(lo / h - 1e-9).astype(np.int64)
    ihi = np.floor(hi / h + 1e-9).astype(np.int64)
    return ilo, ihi - ilo + 1


def rasterize(config: PointConfiguration, region, h: float, max_sites: int = MAX_SITES,
              loc: PointLocator | None = None) -> ColorGrid:
    """Owner and colour of every lattice site ``h * Z^d`` inside ``region``.

    ``region`` is a half-width or a ``(lo, hi)`` pair of corners.
    """
    if not h > 0:
        raise ParameterError(f"pitch must be positive, got {h}")
    if len(config) == 0:
        raise StateError("cannot rasterise an empty configuration")
    d = config.d
    ilo, shape = lattice_range(region, d, h)
    n_sites = float(np.prod(shape.astype(float)))
    if n_sites > max_sites:
        raise ResourceError(f"raster of {n_sites:.3g} sites exceeds the budget of {max_sites}")
    if np.any(np.abs(ilo * h) > config.window.extent + 1e-9) or np.any(
            np.abs((ilo + shape - 1) * h) > config.window.extent + 1e-9):
        raise ParameterError("raster region leaves the padded window")
    axes = [(ilo[a] + np.arange(shape[a])) * h for a in range(d)]
    sites = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    loc = loc or locator(config)
    idx, d2 = loc.query(sites)
    shp = tuple(int(s) for s in shape)
    owner = idx.reshape(shp)
    return ColorGrid(float(h), ilo, owner, config.black[owner], d2.reshape(shp))


def default_pitch(eps: float = 1.0, h_max: float = 0.1) -> float:
    """``min(h_max, eps/4)`` adjusted so that it divides ``eps``."""
    m = int(np.ceil(eps / min(h_max, eps / 4) - 1e-9))
    return eps / m


# -- raster exports ---------------------------------------------------------

def write_pgm(grid: ColorGrid, path) -> None:
    """Plain (P2) greymap of a 2-D raster, black cells dark, row 0 at the top."""
    if grid.d != 2:
        raise ParameterError("PGM export needs a 2-D raster")
    img = np.where(grid.color, 0, 255).T[::-1]
    with open(path, "w") as fh:
        fh.write(f"P2\n{img.shape[1]} {img.shape[0]}\n255\n")
        for row in img:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def write_owner_csv(grid: ColorGrid, path) -> None:
    coords = grid.coords.reshape(-1, grid.d)
    with open(path, "w") as fh:
        fh.write(",".join([f"y{a + 1}" for a in range(grid.d)] + ["owner", "color"]) + "\n")
        for y, o, c in zip(coords.tolist(), grid.owner.ravel().tolist(), grid.color.ravel().tolist()):
            fh.write(",".join(repr(v) for v in y) + f",{o},{int(c)}\n")


# -- planar Delaunay ------------------------------------------------------

@dataclass
class AdjacencyGraph:
    """Pairs of points whose Voronoi cells share an edge.

    ``segments[e]`` is the Voronoi edge dual to ``edges[e]`` (a long finite
    stand-in for unbounded rays). ``cell_reach[i]`` is the largest distance
    from the origin to a vertex of cell ``i`` (``inf`` for unbounded cells).
    """

    n_points: int
    edges: np.ndarray
    segments: np.ndarray
    triangles: np.ndarray
    circumcenters: np.ndarray
    cell_reach: np.ndarray
    points: np.ndarray

    def neighbors(self, i: int) -> np.ndarray:
        e = self.edges
        return np.sort(np.concatenate([e[e[:, 0] == i, 1], e[e[:, 1] == i, 0]]))


def _circumcenters(pts, tri):
    a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    bx, by = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    cx, cy = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    den = 2.0 * (bx * cy - by * cx)
    b2, c2 = bx * bx + by * by, cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / den
    uy = (bx * c2 - cx * b2) / den
    return np.stack([a[:, 0] + ux, a[:, 1] + uy], axis=1)


def _certified(pts, tri, cc, tree) -> bool:
    """Empty-circumcircle test of every triangle against all points."""
    r = np.linalg.norm(pts[tri[:, 0]] - cc, axis=1)
    if not np.all(np.isfinite(r)):
        return False
    inside = tree.query_ball_point(cc, r * (1 - 1e-9), return_length=True)
    return bool(np.all(inside == 0))


def segments_hit_box(seg: np.ndarray, lo, hi) -> np.ndarray:
    """Which segments ``(m, 2, 2)`` meet the closed axis-aligned box (Liang-Barsky)."""
    p0, dvec = seg[:, 0], seg[:, 1] - seg[:, 0]
    t0 = np.zeros(len(seg))
    t1 = np.ones(len(seg))
    ok = np.ones(len(seg), bool)
    for a in range(2):
        for q_lo, sign in ((lo[a], -1.0), (hi[a], 1.0)):
            pa = sign * dvec[:, a]
            qa = sign * (q_lo - p0[:, a])
            par = pa == 0
            ok &= ~(par & (qa < 0))
            with np.errstate(divide="ignore", invalid="ignore"):
                r = qa / pa
            enter = ~par & (pa < 0)
            leave = ~par & (pa > 0)
            t0 = np.where(enter, np.maximum(t0, r), t0)
            t1 = np.where(leave, np.minimum(t1, r), t1)
    return ok & (t0 <= t1)


def delaunay_adjacency_2d(config: PointConfiguration) -> AdjacencyGraph:
    """Voronoi-neighbour graph of a planar configuration.

    Built from a Qhull triangulation and certified by an empty-circumcircle
    check; if certification fails the points are jittered by at most
    ``JITTER`` (seeded from the configuration) and rebuilt. Only pairs whose
    shared Voronoi edge meets the padded window are kept.
    """
    if config.d != 2:
        raise ParameterError("delaunay adjacency needs d == 2")
    pts = np.asarray(config.points, float)
    n = len(pts)
    e = config.window.extent
    empty = AdjacencyGraph(n, np.zeros((0, 2), np.int64), np.zeros((0, 2, 2)), np.zeros((0, 3), np.int64),
                           np.zeros((0, 2)), np.full(n, np.inf), pts)
    if n < 3:
        if n == 2:
            mid = pts.mean(axis=0)
            perp = np.array([-(pts[1, 1] - pts[0, 1]), pts[1, 0] - pts[0, 0]])
            perp *= 10 * e / max(np.linalg.norm(perp), 1e-300)
            empty.edges = np.array([[0, 1]])
            empty.segments = np.array([[mid - perp, mid + perp]])
        return empty
    work = pts
    seed = derive_seed(config.manifest.get("root_seed") or 0, 0xDE1A)
    for attempt in range(4):
        tri_obj = Delaunay(work)
        tri = tri_obj.simplices.astype(np.int64)
        cc = _circumcenters(work, tri)
        if _certified(work, tri, cc, cKDTree(work)):
            break
        rng = np.random.default_rng(seed + attempt)
        work = pts + rng.uniform(-JITTER, JITTER, pts.shape)
    else:
        raise StateError("could not certify a Delaunay triangulation")
    nb = tri_obj.neighbors
    t_idx = np.repeat(np.arange(len(tri)), 3)
    k_idx = np.tile(np.arange(3), len(tri))
    t2 = nb.ravel()
    keep = (t2 == -1) | (t_idx < t2)
    t_idx, k_idx, t2 = t_idx[keep], k_idx[keep], t2[keep]
    a = tri[t_idx, (k_idx + 1) % 3]
    b = tri[t_idx, (k_idx + 2) % 3]
    opp = tri[t_idx, k_idx]
    start = cc[t_idx]
    far = np.where(t2[:, None] >= 0, cc[np.maximum(t2, 0)], 0.0)
    hull = t2 == -1
    if hull.any():
        ab = work[b[hull]] - work[a[hull]]
        perp = np.stack([-ab[:, 1], ab[:, 0]], axis=1)
        perp /= np.linalg.norm(perp, axis=1)[:, None]
        away = np.sum((work[opp[hull]] - work[a[hull]]) * perp, axis=1) > 0
        perp[away] *= -1
        length = np.linalg.norm(start[hull], axis=1) + 10 * e
        far[hull] = start[hull] + perp * length[:, None]
    seg = np.stack([start, far], axis=1)
    hit = segments_hit_box(seg, (-e, -e), (e, e))
    edges = np.sort(np.stack([a, b], axis=1), axis=1)[hit]
    seg = seg[hit]
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    reach = np.zeros(n)
    np.maximum.at(reach, tri.ravel(), np.repeat(np.linalg.norm(cc, axis=1), 3))
    hull_pts = np.unique(tri_obj.convex_hull.ravel())
    reach[hull_pts] = np.inf
    return AdjacencyGraph(n, edges[order], seg[order], tri, cc, reach, pts)
