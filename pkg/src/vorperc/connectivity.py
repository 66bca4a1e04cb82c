"""Connection events on a coloured configuration.

Raster engine
    Sites of ``h * Z^d`` carry the colour of their nearest point. In the
    plane, sites are joined along the two axes and the ``(1, 1)`` diagonal:
    this is the triangular lattice, on which a black left-right crossing of
    a box happens exactly when there is no white top-bottom crossing, and the
    reflection ``x <-> y`` maps the neighbourhood to itself. For ``d >= 3``
    only the ``2d`` axis neighbours are used. A sphere ``S_r`` is represented
    by the sites within ``h * sqrt(d)`` of it.
Delaunay engine (``d == 2``)
    Black cells are joined along shared Voronoi edges; cell geometry comes
    from the Voronoi vertices, so sphere and side contacts are exact.

Every event below is a connection between a *source* site set and a
*target* site set through an *allowed* region, in a given colour. For black
events the same description feeds :func:`raster_thresholds`, which returns
the exact mark level at which the connection appears.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .errors import ParameterError, ResourceError
from .geometry import (MAX_SITES, AdjacencyGraph, ColorGrid, PointLocator, default_pitch, delaunay_adjacency_2d,
                       locator, nearest_point, rasterize)
from .point_process import PointConfiguration, Window

KINDS = ("origin_to_sphere", "point_to_sphere", "box_crossing", "box_to_sphere", "ball_to_side")
SIDES = {"left": (0, 0), "right": (0, 1), "bottom": (1, 0), "top": (1, 1)}


@dataclass(frozen=True)
class EventSpec:
    """A connection event.

    ``n`` is the outer radius (or box half-width), ``r`` an inner radius,
    ``x`` a point for ``point_to_sphere`` (whose sphere radius is ``n``),
    ``axis`` the crossing direction of ``box_crossing`` and ``side`` the
    face of ``ball_to_side``. ``color="white"`` gives the analogous
    decreasing event for the white set.
    """

    kind: str
    n: float
    r: float = 0.0
    x: tuple | None = None
    axis: int = 0
    side: str = "top"
    color: str = "black"
    engine: str = "raster"
    h: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown event kind {self.kind!r}")
        if self.engine not in ("raster", "delaunay2d"):
            raise ParameterError(f"unknown engine {self.engine!r}")
        if self.color not in ("black", "white"):
            raise ParameterError(f"colour must be black or white, got {self.color!r}")
        if not self.n > 0:
            raise ParameterError(f"radius must be positive, got {self.n}")
        if self.kind in ("box_to_sphere", "ball_to_side") and not 0 <= self.r <= self.n:
            raise ParameterError("inner radius must lie in [0, n]")
        if self.kind == "point_to_sphere" and self.x is None:
            raise ParameterError("point_to_sphere needs a point x")
        if self.kind == "ball_to_side" and self.side not in SIDES:
            raise ParameterError(f"unknown side {self.side!r}")
        if self.h is not None and not self.h > 0:
            raise ParameterError("pitch must be positive")

    @property
    def increasing(self) -> bool:
        return self.color == "black"

    @property
    def pitch(self) -> float:
        return self.h if self.h is not None else default_pitch()

    @property
    def extent(self) -> float:
        """Half-width of the cube the event needs (before padding)."""
        if self.kind == "point_to_sphere":
            return max(self.n, float(np.max(np.abs(self.x)))) + 1.0
        return self.n + 1.0

    def label(self) -> str:
        k = self.kind
        if k == "origin_to_sphere":
            base = f"origin_to_sphere({self.n:g})"
        elif k == "point_to_sphere":
            base = f"point_to_sphere({tuple(self.x)},{self.n:g})"
        elif k == "box_crossing":
            base = f"box_crossing({self.n:g},axis={self.axis})"
        elif k == "box_to_sphere":
            base = f"box_to_sphere({self.r:g},{self.n:g})"
        else:
            base = f"ball_to_side({self.r:g},{self.n:g},{self.side})"
        return base if self.color == "black" else f"white:{base}"


def origin_to_sphere(n, **kw) -> EventSpec:
    return EventSpec("origin_to_sphere", n, **kw)


def box_crossing(n, **kw) -> EventSpec:
    return EventSpec("box_crossing", n, **kw)


def window_for(spec: EventSpec, d: int, eps: float = 1.0) -> Window:
    return Window.for_radius(d, spec.extent, eps)


# -- raster event geometry -------------------------------------------------

@dataclass
class SiteSets:
    """Boolean site masks on a raster box (flattened C order)."""

    shape: tuple
    lo: np.ndarray
    allowed: np.ndarray
    source: np.ndarray
    target: np.ndarray
    radius: np.ndarray = field(repr=False, default=None)


def _lattice(d, h, half_width):
    m = int(math.floor(half_width / h + 1e-9))
    lo = np.full(d, -m, np.int64)
    return lo, (2 * m + 1,) * d


def site_sets(spec: EventSpec, d: int, h: float | None = None) -> SiteSets:
    """Raster region and source/target masks for ``spec``."""
    h = h or spec.pitch
    band = h * math.sqrt(d)
    n = spec.n
    if spec.kind in ("box_crossing", "ball_to_side"):
        lo, shape = _lattice(d, h, n)
    elif spec.kind == "point_to_sphere":
        lo, shape = _lattice(d, h, spec.extent - 1.0 + band)
    else:
        lo, shape = _lattice(d, h, n + band)
    if float(np.prod(np.asarray(shape, float))) > MAX_SITES:
        raise ResourceError(f"event raster of {np.prod(np.asarray(shape, float)):.3g} sites exceeds the budget")
    axes = [(lo[a] + np.arange(shape[a])) * h for a in range(d)]
    coords = np.meshgrid(*axes, indexing="ij")
    rad = np.sqrt(sum(c * c for c in coords))
    if spec.kind == "origin_to_sphere":
        allowed = rad <= n + band
        source = rad == 0
        target = allowed & (rad >= n - band)
    elif spec.kind == "box_to_sphere":
        allowed = rad <= n + band
        source = rad <= spec.r
        target = allowed & (rad >= n - band)
    elif spec.kind == "point_to_sphere":
        allowed = np.ones(shape, bool)
        i = np.rint(np.asarray(spec.x, float) / h).astype(np.int64) - lo
        source = np.zeros(shape, bool)
        source[tuple(i)] = True
        target = np.abs(rad - n) <= band
    elif spec.kind == "box_crossing":
        if not 0 <= spec.axis < d:
            raise ParameterError(f"axis {spec.axis} out of range for d={d}")
        allowed = np.ones(shape, bool)
        source = np.zeros(shape, bool)
        target = np.zeros(shape, bool)
        idx = [slice(None)] * d
        idx[spec.axis] = 0
        source[tuple(idx)] = True
        idx[spec.axis] = -1
        target[tuple(idx)] = True
    else:
        allowed = np.ones(shape, bool)
        source = rad <= spec.r
        target = np.zeros(shape, bool)
        axis, end = SIDES[spec.side]
        if axis >= d:
            raise ParameterError(f"side {spec.side} needs d >= 2")
        idx = [slice(None)] * d
        idx[axis] = -1 if end else 0
        target[tuple(idx)] = True
    return SiteSets(tuple(shape), lo, allowed.ravel(), source.ravel(), target.ravel(), rad.ravel())


def _grid_for(config: PointConfiguration, sets: SiteSets, h: float, loc=None) -> ColorGrid:
    lo = sets.lo * h
    hi = (sets.lo + np.asarray(sets.shape) - 1) * h
    if np.any(np.abs(lo) > config.window.extent + 1e-9) or np.any(np.abs(hi) > config.window.extent + 1e-9):
        raise ParameterError("event does not fit in the configuration's padded window")
    return rasterize(config, (lo, hi), h, loc=loc)


def event_grid(config: PointConfiguration, spec: EventSpec, loc: PointLocator | None = None):
    """Raster and site masks for evaluating ``spec`` on ``config``."""
    h = spec.pitch
    sets = site_sets(spec, config.d, h)
    return _grid_for(config, sets, h, loc), sets


def neighbor_offsets(d: int) -> np.ndarray:
    """Lattice steps joining adjacent raster sites (both signs)."""
    steps = [np.eye(d, dtype=np.int64)[a] for a in range(d)]
    if d == 2:
        steps.append(np.array([1, 1], np.int64))
    steps = np.array(steps)
    return np.concatenate([steps, -steps])


def _structure(d):
    st = np.zeros((3,) * d, bool)
    st[(1,) * d] = True
    for o in neighbor_offsets(d):
        st[tuple(o + 1)] = True
    return st


def raster_event(grid: ColorGrid, sets: SiteSets, color: str = "black") -> bool:
    """Evaluate a prepared raster event by component labelling."""
    c = grid.color.ravel() if color == "black" else ~grid.color.ravel()
    mask = (c & sets.allowed).reshape(sets.shape)
    labels, _ = ndimage.label(mask, structure=_structure(len(sets.shape)))
    lab = labels.ravel()
    src = np.unique(lab[sets.source & mask.ravel()])
    tgt = np.unique(lab[sets.target & mask.ravel()])
    src = src[src > 0]
    return bool(np.intersect1d(src, tgt, assume_unique=True).size)


def raster_connects(color_flat: np.ndarray, sets: SiteSets) -> bool:
    """Same answer as :func:`raster_event` via an early-exit search."""
    return bool(_kernels.connects(color_flat & sets.allowed, sets.source, sets.target,
                                  np.asarray(sets.shape, np.int64), neighbor_offsets(len(sets.shape))))


# -- delaunay engine ---------------------------------------------------------

def _crossing_owners(graph: AdjacencyGraph, p0, p1, config, loc) -> np.ndarray:
    """Cells met by the segment ``p0 -> p1``: its start cell plus both sides
    of every Voronoi edge it crosses."""
    seg = graph.segments
    a, b = seg[:, 0], seg[:, 1]
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    r = p1 - p0
    s = b - a
    den = r[0] * s[:, 1] - r[1] * s[:, 0]
    qp = a - p0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
        u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / den
    hit = (den != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    start, _ = loc.query(p0.reshape(1, -1))
    return np.unique(np.concatenate([graph.edges[hit].ravel(), start]))


def delaunay_event(config: PointConfiguration, spec: EventSpec, graph: AdjacencyGraph | None = None) -> bool:
    if config.d != 2:
        raise ParameterError("delaunay2d engine needs d == 2")
    graph = graph or delaunay_adjacency_2d(config)
    color = config.black if spec.color == "black" else ~config.black
    n_pts = len(config)
    loc = locator(config)
    if spec.kind == "origin_to_sphere":
        o = nearest_point(config, np.zeros(2))
        if not color[o]:
            return False
        edges = graph.edges[color[graph.edges[:, 0]] & color[graph.edges[:, 1]]]
        _, lab = _components(n_pts, edges)
        comp = lab == lab[o]
        return bool(np.any(graph.cell_reach[comp & color] >= spec.n))
    if spec.kind == "box_crossing":
        n = spec.n
        inside = _segments_in_box(graph.segments, n)
        keep = inside & color[graph.edges[:, 0]] & color[graph.edges[:, 1]]
        _, lab = _components(n_pts, graph.edges[keep])
        if spec.axis == 0:
            src = _crossing_owners(graph, (-n, -n), (-n, n), config, loc)
            tgt = _crossing_owners(graph, (n, -n), (n, n), config, loc)
        else:
            src = _crossing_owners(graph, (-n, -n), (n, -n), config, loc)
            tgt = _crossing_owners(graph, (-n, n), (n, n), config, loc)
        src = src[color[src]]
        tgt = tgt[color[tgt]]
        return bool(np.intersect1d(lab[src], lab[tgt]).size)
    raise ParameterError(f"delaunay2d engine does not support {spec.kind}")


def _segments_in_box(seg, n):
    from .geometry import segments_hit_box
    return segments_hit_box(seg, (-n, -n), (n, n))


def _components(n, edges):
    if len(edges) == 0:
        return n, np.arange(n)
    m = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    return connected_components(m, directed=False)


# -- public API --------------------------------------------------------------

def evaluate(config: PointConfiguration, spec: EventSpec) -> bool:
    """Whether ``spec`` occurs in ``config``."""
    if spec.engine == "delaunay2d":
        return delaunay_event(config, spec)
    grid, sets = event_grid(config, spec)
    return raster_event(grid, sets, spec.color)


def black_components(config: PointConfiguration, engine: str = "raster", region=None, h=None):
    """Label the black connected sets.

    Raster engine: returns ``(ColorGrid, labels)`` with ``labels`` an integer
    array on the sites (0 for white). Delaunay engine: returns
    ``(AdjacencyGraph, labels)`` with one label per point (-1 for white).
    """
    if engine == "raster":
        h = h or default_pitch()
        region = config.window.L if region is None else region
        grid = rasterize(config, region, h)
        labels, _ = ndimage.label(grid.color, structure=_structure(config.d))
        return grid, labels
    if engine == "delaunay2d":
        graph = delaunay_adjacency_2d(config)
        b = config.black
        edges = graph.edges[b[graph.edges[:, 0]] & b[graph.edges[:, 1]]]
        _, lab = _components(len(config), edges)
        _, lab = np.unique(lab, return_inverse=True)
        lab = np.where(b, lab, -1)
        present = np.unique(lab[lab >= 0])
        remap = np.full(len(config) + 1, -1)
        remap[present] = np.arange(len(present))
        return graph, np.where(lab >= 0, remap[lab], -1)
    raise ParameterError(f"unknown engine {engine!r}")


# -- exact thresholds -------------------------------------------------------

def raster_thresholds(grid: ColorGrid, sets: SiteSets, marks: np.ndarray, target_class=None,
                      n_classes: int = 1) -> np.ndarray:
    """Mark level at which each target class connects to the source.

    With marks ``u`` and colour rule ``black = u < p``, the connection holds at
    ``p`` exactly when the returned level is ``< p``.
    """
    weights = marks[grid.owner.ravel()].astype(float)
    if target_class is None:
        target_class = np.where(sets.target, 0, -1).astype(np.int32)
    return _kernels.invade(weights, sets.allowed, sets.source, target_class.astype(np.int32),
                           int(n_classes), np.asarray(sets.shape, np.int64),
                           neighbor_offsets(len(sets.shape)))


def sphere_thresholds(config: PointConfiguration, n_max: int, h: float | None = None,
                      loc: PointLocator | None = None) -> np.ndarray:
    """Levels at which the origin reaches ``S_n`` for ``n = 0..n_max``.

    Entry ``n`` is the smallest mark level ``q`` with ``0 <-> S_n`` for every
    ``p > q``; entry 0 is the origin's own mark.
    """
    spec = origin_to_sphere(n_max, h=h)
    h = spec.pitch
    d = config.d
    grid, sets = event_grid(config, spec, loc)
    band = h * math.sqrt(d)
    cls = np.floor(sets.radius + band + 1e-12).astype(np.int64)
    cls = np.where(sets.allowed, np.minimum(cls, n_max), -1).astype(np.int32)
    thr = raster_thresholds(grid, sets, config.marks, cls, n_max + 1)
    out = np.minimum.accumulate(thr[::-1])[::-1]
    out[0] = config.marks[grid.owner.ravel()[sets.source][0]]
    return out
