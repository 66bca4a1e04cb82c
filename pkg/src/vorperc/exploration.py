"""Exploration of the black component of a sphere, box by box.

``run_Tk`` decides ``{0 <-> S_n}`` by repeatedly picking the smallest
(lexicographic) unvisited box touching the explored black set, learning the
colours inside it with :func:`discover`, and adding its black part to the
explored set. ``discover`` reveals whole boxes in rounds of growing radius
around the box until the colouring of the box is certified by the revealed
points alone.

The explored set is represented by the raster sites of ``h * Z^d`` inside
the ball of radius ``n + h sqrt(d)``, joined as in :mod:`connectivity`.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache, partial

import numpy as np
from scipy import ndimage

from . import _kernels
from .connectivity import _structure, neighbor_offsets, origin_to_sphere, site_sets
from .errors import ParameterError, WindowTooSmallError
from .estimators import Estimate
from .geometry import default_pitch, rasterize
from .point_process import PointConfiguration, Window, sample_configuration
from .runner import map_trials

SUB_PITCH = 0.1


@dataclass
class Discovery:
    """Outcome of one ``discover`` call."""

    box: tuple
    rounds: int
    revealed: np.ndarray
    points: np.ndarray = field(repr=False)
    black: np.ndarray = field(repr=False)

    def color_at(self, y) -> np.ndarray:
        """Certified colour (True = black) at each row of ``y`` inside the box."""
        y = np.atleast_2d(np.asarray(y, float))
        d2 = np.sum((y[:, None, :] - self.points[None, :, :]) ** 2, axis=2)
        return self.black[np.argmin(d2, axis=1)]


@lru_cache(maxsize=16)
def _offsets_by_norm(d, eps, r):
    axes = [np.arange(-r, r + 1)] * d
    off = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    norms = eps * np.sqrt(np.sum(off.astype(float) ** 2, axis=1))
    order = np.argsort(norms, kind="stable")
    return off[order], norms[order]


class Explorer:
    """Per-configuration state shared by ``discover`` calls (results are cached)."""

    def __init__(self, config: PointConfiguration, h: float | None = None):
        self.config = config
        self.grid = config.grid
        self.eps = self.grid.eps
        self.d = config.d
        self.h = h or default_pitch(self.eps)
        ratio = self.eps / self.h
        if abs(ratio - round(ratio)) > 1e-9:
            raise ParameterError("raster pitch must divide the box size")
        self.ratio = int(round(ratio))
        counts = np.bincount(config.boxes, minlength=self.grid.n_boxes)
        width = max(int(counts.max()) if len(counts) else 0, 1)
        table = np.full((self.grid.n_boxes, width), -1, np.int64)
        start = np.concatenate([[0], np.cumsum(counts)])
        slot = np.arange(len(config)) - start[config.boxes]
        table[config.boxes, slot] = np.arange(len(config))
        self.table = table
        m = int(math.ceil(self.eps / SUB_PITCH - 1e-9))
        sub = np.stack(np.meshgrid(*[np.arange(m)] * self.d, indexing="ij"), -1).reshape(-1, self.d)
        self.sub_lo = sub * (self.eps / m)
        self.sub_hi = (sub + 1) * (self.eps / m)
        self.cache: dict = {}

    def _offset_table(self, t_max):
        r = int(math.ceil((t_max + 4 * math.sqrt(self.d) * self.eps) / self.eps)) + 1
        return _offsets_by_norm(self.d, self.eps, r)

    def _in_grid(self, boxes):
        lo = np.asarray(self.grid.lo)
        return np.all((boxes >= lo) & (boxes < lo + np.asarray(self.grid.shape)), axis=1)

    def discover(self, box) -> Discovery:
        """Reveal boxes ``x`` with ``|x - y| <= t`` for ``t = 0, 1, 2, ...``
        until every point of box ``y`` has a certified colour.

        Certification: the box is cut into sub-boxes of side about 0.1; for
        each, the largest distance to its nearest revealed point (bounded via
        the sub-box corners) must be strictly smaller than its distance to
        every box not revealed (boxes outside the sampled window count as not
        revealed).
        """
        y = np.asarray(box, np.int64)
        key = tuple(int(v) for v in y)
        if key in self.cache:
            return self.cache[key]
        if not self.grid.contains(y):
            raise ParameterError(f"box {key} is outside the grid")
        lo = np.asarray(self.grid.lo)
        hi = lo + np.asarray(self.grid.shape)
        t_cap = self.eps * math.sqrt(float(np.sum(np.maximum(np.abs(y - lo), np.abs(hi - y)) ** 2)))
        shell = (2 * math.sqrt(self.d) + 1) * self.eps
        off, norms = self._offset_table(t_cap + 1)
        t = _kernels.certify_rounds(y, self.eps, off, norms, lo.astype(np.int64),
                                    np.asarray(self.grid.shape, np.int64), self.table, self.config.points,
                                    self.sub_lo, self.sub_hi, shell, t_cap)
        if t < 0:
            raise WindowTooSmallError(f"box {key} cannot be certified inside the sampled window")
        ball = y + off[:np.searchsorted(norms, t + 1e-12, side="right")]
        revealed = ball[self._in_grid(ball)]
        idx = self.table[self.grid.flat(revealed)].ravel()
        idx = idx[idx >= 0]
        pts = self.config.points[idx]
        out = Discovery(key, t, np.sort(self.grid.flat(revealed)), pts, self.config.black[idx])
        self.cache[key] = out
        return out


def discover(config: PointConfiguration, y, explorer: Explorer | None = None) -> Discovery:
    return (explorer or Explorer(config)).discover(y)


@dataclass
class ExplorationTrace:
    k: float
    n: float
    visits: list
    z_sizes: list
    revealed: np.ndarray
    decision: bool
    snapshots: list | None = None

    @property
    def steps(self) -> int:
        return len(self.visits)

    def to_json(self, path=None) -> str:
        doc = {"k": self.k, "n": self.n, "decision": bool(self.decision), "steps": self.steps,
               "visits": [list(v) for v in self.visits], "z_sizes": list(map(int, self.z_sizes)),
               "revealed": self.revealed.tolist()}
        text = json.dumps(doc, indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


class _Region:
    """Raster sites of the ball of radius ``n + band`` with their boxes."""

    def __init__(self, n, h, eps, d, grid):
        sets = site_sets(origin_to_sphere(n, h=h), d, h)
        self.sets = sets
        self.band = h * math.sqrt(d)
        self.shape = np.asarray(sets.shape, np.int64)
        multi = np.stack(np.unravel_index(np.arange(int(self.shape.prod())), sets.shape), 1)
        lattice = multi + sets.lo
        self.coords = lattice * h
        self.radius = np.sqrt(np.sum(self.coords ** 2, axis=1))
        ratio = int(round(eps / h))
        site_box = np.floor_divide(lattice, ratio)
        lo = np.asarray(grid.lo)
        inside = np.all((site_box >= lo) & (site_box < lo + np.asarray(grid.shape)), axis=1)
        if not np.all(inside[sets.allowed]):
            raise WindowTooSmallError("exploration region leaves the sampled window")
        self.box_of = np.full(len(lattice), -1, np.int64)
        self.box_of[inside] = grid.flat(site_box[inside])
        allowed = np.flatnonzero(sets.allowed)
        order = allowed[np.argsort(self.box_of[allowed], kind="stable")]
        self.sorted_sites = order
        self.sorted_boxes = self.box_of[order]
        self.offsets = neighbor_offsets(d)
        strides = np.array([int(np.prod(self.shape[a + 1:])) for a in range(d)], np.int64)
        # box of every allowed raster neighbour, -1 where there is none
        self.neighbour_box = np.full((len(lattice), len(self.offsets)), -1, np.int64)
        for i, o in enumerate(self.offsets):
            m = multi + o
            ok = np.all((m >= 0) & (m < self.shape), axis=1)
            t = np.where(ok, m @ strides, 0)
            ok &= sets.allowed[t]
            self.neighbour_box[ok, i] = self.box_of[t[ok]]

    def sites_in(self, flat_box):
        a, b = np.searchsorted(self.sorted_boxes, [flat_box, flat_box + 1])
        return self.sorted_sites[a:b]


@lru_cache(maxsize=8)
def _region(n, h, eps, d, grid) -> _Region:
    return _Region(n, h, eps, d, grid)


def _sphere_boxes(explorer: Explorer, k: float) -> np.ndarray:
    """Flat indices of boxes whose closure meets the sphere of radius ``k``."""
    eps, d = explorer.eps, explorer.d
    m = int(math.ceil(k / eps)) + 1
    axes = [np.arange(-m, m)] * d
    b = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    lo, hi = b * eps, (b + 1) * eps
    near = np.sqrt(np.sum(np.maximum(np.maximum(lo, -hi), 0) ** 2, axis=1))
    far = np.sqrt(np.sum(np.maximum(np.abs(lo), np.abs(hi)) ** 2, axis=1))
    hit = (near <= k) & (far >= k)
    b = b[hit]
    return explorer.grid.flat(b[explorer._in_grid(b)])


def run_Tk(config: PointConfiguration, k: float, n: float, h: float | None = None,
           explorer: Explorer | None = None, snapshots: bool = False) -> ExplorationTrace:
    """Explore from the sphere of radius ``k`` and decide whether ``0 <-> S_n``.

    The explored set starts from the sphere (boxes meeting ``S_k`` and boxes
    holding raster sites within ``h sqrt(d)`` of it). After a box is
    discovered, its black raster sites join the explored set, and boxes
    holding raster neighbours of explored sites become candidates. The
    decision is read off the explored black sites, which contain the whole
    black component of every explored site inside the ball.
    """
    if not 0 < k <= n:
        raise ParameterError("need 0 < k <= n")
    ex = explorer or Explorer(config, h)
    reg = _region(float(n), ex.h, ex.eps, ex.d, ex.grid)
    radius = reg.radius
    allowed = reg.sets.allowed
    n_sites = len(allowed)
    zmask = np.zeros(n_sites, np.bool_)
    visited = np.zeros(ex.grid.n_boxes, np.bool_)
    queued = np.zeros(ex.grid.n_boxes, np.bool_)
    start = np.unique(np.concatenate([_sphere_boxes(ex, k),
                                      reg.box_of[allowed & (np.abs(radius - k) <= reg.band)]]))
    heap = [int(f) for f in start]
    heapq.heapify(heap)
    queued[start] = True
    visits, sizes, snaps, revealed = [], [], [], []
    while heap:
        f = heapq.heappop(heap)
        box = tuple(int(v) for v in ex.grid.unflat(f))
        disc = ex.discover(box)
        revealed.append(disc.revealed)
        visited[f] = True
        visits.append(box)
        sites = reg.sites_in(f)
        if len(sites):
            black = disc.color_at(reg.coords[sites])
            new = sites[black]
            zmask[new] = True
            if len(new):
                nb = np.unique(reg.neighbour_box[new])
                nb = nb[nb >= 0]
                nb = nb[~queued[nb]]
                queued[nb] = True
                for g in nb:
                    heapq.heappush(heap, int(g))
        sizes.append(int(zmask.sum()))
        if snapshots:
            snaps.append(np.flatnonzero(zmask))
    target = allowed & (radius >= n - reg.band)
    decision = bool(_kernels.connects(zmask, reg.sets.source, target, reg.shape, reg.offsets))
    rev = np.unique(np.concatenate(revealed)) if revealed else np.zeros(0, np.int64)
    return ExplorationTrace(k, n, visits, sizes, rev, decision, snaps if snapshots else None)


# -- revealment ------------------------------------------------------------------

@dataclass
class RevealmentProfile:
    """Per-box revealment frequencies over the sampled window's box grid."""

    p: float
    k: float
    n: float
    eps: float
    boxes: np.ndarray
    revealed: np.ndarray
    connected: np.ndarray
    trials: int
    seed: int

    @property
    def delta(self) -> np.ndarray:
        return self.revealed / self.trials

    @property
    def connection(self) -> np.ndarray:
        """Estimated probability that the box corner is joined to ``S_k``."""
        return self.connected / self.trials

    def estimate(self, box) -> Estimate:
        i = int(np.flatnonzero(np.all(self.boxes == np.asarray(box), axis=1))[0])
        m = self.delta[i]
        t = self.trials
        return Estimate(float(m), float(math.sqrt(m * (1 - m) / max(t - 1, 1))), t, self.seed,
                        f"revealed(k={self.k:g},n={self.n:g})", {"p": self.p, "eps": self.eps, "box": tuple(box)})

    def max_ratio(self, min_count: float = 10.0) -> tuple:
        """Largest ``delta / P[x <-> S_k]`` over boxes with ``P > min_count / trials``."""
        ok = self.connected > min_count
        if not ok.any():
            return math.nan, None
        r = np.where(ok, self.revealed / np.maximum(self.connected, 1), -np.inf)
        i = int(np.argmax(r))
        return float(r[i]), tuple(int(v) for v in self.boxes[i])

    def to_csv(self, path) -> None:
        d = self.boxes.shape[1]
        with open(path, "w") as fh:
            fh.write(",".join([f"x{a + 1}" for a in range(d)] + ["revealment", "connection"]) + "\n")
            for b, r, c in zip(self.boxes, self.delta, self.connection):
                fh.write(",".join([str(int(v)) for v in b] + [repr(float(r)), repr(float(c))]) + "\n")


def connection_to_spheres(config: PointConfiguration, ks, h: float | None = None) -> np.ndarray:
    """``out[i, j]``: box corner ``j`` is joined in black to ``S_{ks[i]}`` inside the window."""
    grid = config.grid
    h = h or default_pitch(grid.eps)
    ratio = int(round(grid.eps / h))
    cg = rasterize(config, config.window.extent, h)
    labels, _ = ndimage.label(cg.color, structure=_structure(config.d))
    lab = labels.ravel()
    rad = cg.radius.ravel()
    band = h * math.sqrt(config.d)
    corners = grid.indices() * ratio - cg.lo
    ok = np.all((corners >= 0) & (corners < np.asarray(cg.shape)), axis=1)
    corner_lab = np.zeros(len(corners), lab.dtype)
    corner_lab[ok] = labels[tuple(corners[ok].T)]
    out = np.zeros((len(ks), len(corners)), np.bool_)
    for i, k in enumerate(ks):
        touching = np.unique(lab[(np.abs(rad - k) <= band) & (lab > 0)])
        out[i] = np.isin(corner_lab, touching) & (corner_lab > 0)
    return out


def _revealment_trial(p, ks, n, window, eps, h, with_connection, seed):
    return _revealment_config(sample_configuration(window, p, seed, eps), ks, n, h, with_connection)


def _revealment_config(config, ks, n, h, with_connection):
    ex = Explorer(config, h)
    rev = [run_Tk(config, k, n, explorer=ex).revealed for k in ks]
    con = connection_to_spheres(config, ks, ex.h) if with_connection else None
    return rev, (None if con is None else [np.flatnonzero(c) for c in con])


def revealment_profiles(p: float, ks, n: float, eps: float, trials: int, root_seed: int, d: int = 2,
                        h: float | None = None, with_connection: bool = True,
                        threads: int = 1) -> dict:
    """Revealment (and connection) frequencies for several ``k`` on shared samples."""
    if d != 2:
        raise ParameterError("revealment profiles are implemented for d = 2")
    ks = list(ks)
    window = Window.for_radius(d, n + 1.0, eps)
    rows = map_trials(partial(_revealment_trial, p, ks, n, window, eps, h, with_connection), trials, root_seed, threads)
    grid = sample_configuration(window, p, root_seed, eps).grid
    out = {}
    for i, k in enumerate(ks):
        rev = np.zeros(grid.n_boxes, np.int64)
        con = np.zeros(grid.n_boxes, np.int64)
        for r, c in rows:
            rev[r[i]] += 1
            if c is not None:
                con[c[i]] += 1
        out[k] = RevealmentProfile(p, k, n, eps, grid.indices(), rev, con, trials, root_seed)
    return out


def revealment_profile(p: float, k: float, n: float, eps: float, trials: int, root_seed: int, d: int = 2,
                       h: float | None = None, threads: int = 1) -> RevealmentProfile:
    return revealment_profiles(p, [k], n, eps, trials, root_seed, d, h, True, threads)[k]
