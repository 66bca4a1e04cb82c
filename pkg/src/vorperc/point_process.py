"""Two-colour Poisson point process on a padded cubic window.

A configuration is a unit-intensity Poisson sample where every point carries
a uniform mark ``u``; the point is black iff ``u < p``. Thinning keeps the
black and white processes independent with intensities ``p`` and ``1 - p``,
and re-thresholding the same marks couples configurations at different ``p``
monotonically (common random numbers).

Randomness layout
-----------------
* the base sample for ``root_seed`` comes from one Philox stream keyed by
  ``root_seed``; boxes are filled in flat (row-major) grid order;
* a resampled box draws from a Philox stream keyed by ``fresh_seed``;
  :func:`resample_seed` derives that key from ``(root_seed, box, counter)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParameterError

VOID_PROBABILITY = 1e-9


def derive_seed(root_seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed of ``root_seed`` for the integer path ``keys``."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def resample_seed(root_seed: int, box_flat: int, counter: int) -> int:
    return derive_seed(root_seed, 0x5EED, box_flat, counter)


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def min_padding(d: int, void_probability: float = VOID_PROBABILITY) -> float:
    """Smallest ``pad`` with ``exp(-v_d pad^d) < void_probability``."""
    return (math.log(1.0 / void_probability) / unit_ball_volume(d)) ** (1.0 / d)


@dataclass(frozen=True)
class Window:
    """Events live in ``[-L, L]^d``; points are sampled in ``[-L-pad, L+pad]^d``."""

    d: int
    L: float
    pad: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"dimension must be a positive integer, got {self.d}")
        if not self.L > 0:
            raise ParameterError(f"half-width must be positive, got {self.L}")
        if not self.pad > 0:
            raise ParameterError(f"padding must be positive, got {self.pad}")

    @property
    def extent(self) -> float:
        """Half-width of the padded window."""
        return self.L + self.pad

    @property
    def volume(self) -> float:
        return (2.0 * self.extent) ** self.d

    @classmethod
    def for_radius(cls, d: int, L: float, eps: float = 1.0) -> "Window":
        """Window padded by the void-probability rule, rounded so ``eps`` tiles it."""
        if not eps > 0:
            raise ParameterError(f"eps must be positive, got {eps}")
        outer = math.ceil((L + min_padding(d)) / eps - 1e-9) * eps
        return cls(d, float(L), float(outer - L))


@dataclass(frozen=True)
class EpsilonGrid:
    """Boxes ``eps * (j + [0,1)^d)`` for integer ``j`` with ``lo <= j < lo + shape``."""

    eps: float
    lo: tuple
    shape: tuple

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def n_boxes(self) -> int:
        return int(np.prod(self.shape))

    def indices(self) -> np.ndarray:
        """All box indices in flat (lexicographic) order, shape ``(n_boxes, d)``."""
        axes = [np.arange(l, l + s) for l, s in zip(self.lo, self.shape)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def contains(self, box) -> bool:
        j = np.asarray(box)
        lo = np.asarray(self.lo)
        return bool(j.shape == (self.d,) and np.all(j >= lo) and np.all(j < lo + self.shape))

    def flat(self, box) -> np.ndarray:
        j = np.asarray(box, dtype=np.int64) - np.asarray(self.lo)
        return np.ravel_multi_index(tuple(np.moveaxis(j, -1, 0)), self.shape)

    def unflat(self, f) -> np.ndarray:
        j = np.stack(np.unravel_index(np.asarray(f), self.shape), axis=-1)
        return j + np.asarray(self.lo)

    def corner(self, box) -> np.ndarray:
        return np.asarray(box, dtype=float) * self.eps

    def box_of(self, points) -> np.ndarray:
        """Integer box index of each point (half-open boxes, floor indexing)."""
        return np.floor(np.asarray(points, dtype=float) / self.eps).astype(np.int64)


def box_partition(window: Window, eps: float) -> EpsilonGrid:
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    k = window.extent / eps
    K = round(k)
    if abs(k - K) > 1e-9 * max(1.0, k) or K < 1:
        raise ParameterError(f"eps={eps} does not tile the padded half-width {window.extent}")
    return EpsilonGrid(float(eps), (-K,) * window.d, (2 * K,) * window.d)


@dataclass(frozen=True)
class PointConfiguration:
    """Immutable coloured sample; arrays are read-only.

    ``boxes`` holds the flat grid index of every point and the arrays are kept
    sorted by it, so the layout is a pure function of the seeds.
    """

    points: np.ndarray
    marks: np.ndarray
    black: np.ndarray
    boxes: np.ndarray
    p: float
    window: Window
    grid: EpsilonGrid
    manifest: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for a in (self.points, self.marks, self.black, self.boxes):
            a.setflags(write=False)

    def __len__(self):
        return len(self.marks)

    @property
    def d(self) -> int:
        return self.window.d

    @property
    def black_points(self) -> np.ndarray:
        return self.points[self.black]

    @property
    def white_points(self) -> np.ndarray:
        return self.points[~self.black]

    def with_p(self, p: float) -> "PointConfiguration":
        """Same points, colours re-thresholded at ``p``."""
        _check_p(p)
        return replace(self, black=self.marks < p, p=float(p), manifest=dict(self.manifest, p=float(p)))

    def recolored(self, index, is_black: bool) -> "PointConfiguration":
        black = self.black.copy()
        black[index] = is_black
        return replace(self, black=black)

    def in_box(self, box) -> np.ndarray:
        """Indices of the points lying in grid box ``box``."""
        f = int(self.grid.flat(box))
        lo, hi = np.searchsorted(self.boxes, [f, f + 1])
        return np.arange(lo, hi)


def _check_p(p):
    if not (0.0 <= p <= 1.0):
        raise ParameterError(f"p must lie in [0, 1], got {p}")


def _fill_boxes(rng, grid: EpsilonGrid, flat_boxes: np.ndarray):
    """Poisson(eps^d) points per listed box, uniform positions and marks."""
    counts = rng.poisson(grid.eps ** grid.d, size=len(flat_boxes))
    owner = np.repeat(flat_boxes, counts)
    corners = grid.unflat(owner).astype(float)
    offsets = rng.random((len(owner), grid.d))
    marks = rng.random(len(owner))
    pts = (corners + offsets) * grid.eps
    # rounding can push a coordinate onto the upper face of its box
    bad = np.floor(pts / grid.eps) > corners
    while bad.any():
        pts[bad] = np.nextafter(pts[bad], -np.inf)
        bad = np.floor(pts / grid.eps) > corners
    return pts, marks, owner


def sample_configuration(window: Window, p: float, root_seed: int, eps: float = 1.0) -> PointConfiguration:
    """Fresh unit-intensity sample in the padded window, coloured at ``p``."""
    _check_p(p)
    grid = box_partition(window, eps)
    rng = _generator(root_seed)
    pts, marks, owner = _fill_boxes(rng, grid, np.arange(grid.n_boxes))
    manifest = {"root_seed": int(root_seed), "eps": grid.eps, "p": float(p), "resamples": []}
    return PointConfiguration(pts, marks, marks < p, owner.astype(np.int64), float(p), window, grid, manifest)


def box_sample(grid: EpsilonGrid, box_flat: int, fresh_seed: int):
    """Fresh ``(points, marks)`` for one box, as used by :func:`resample_box`."""
    pts, marks, _ = _fill_boxes(_generator(fresh_seed), grid, np.array([box_flat]))
    return pts, marks


def resample_box(config: PointConfiguration, box, fresh_seed: int) -> PointConfiguration:
    """Copy of ``config`` whose content in ``box`` is an independent fresh sample."""
    grid = config.grid
    if not grid.contains(box):
        raise ParameterError(f"box {tuple(np.asarray(box))} is outside the grid")
    f = int(grid.flat(box))
    pts, marks = box_sample(grid, f, fresh_seed)
    owner = np.full(len(pts), f, np.int64)
    lo, hi = np.searchsorted(config.boxes, [f, f + 1])
    manifest = dict(config.manifest)
    manifest["resamples"] = list(manifest.get("resamples", [])) + [[f, int(fresh_seed)]]
    return PointConfiguration(
        np.concatenate([config.points[:lo], pts, config.points[hi:]]),
        np.concatenate([config.marks[:lo], marks, config.marks[hi:]]),
        np.concatenate([config.black[:lo], marks < config.p, config.black[hi:]]),
        np.concatenate([config.boxes[:lo], owner, config.boxes[hi:]]),
        config.p,
        config.window,
        grid,
        manifest,
    )


# -- point dump -------------------------------------------------------------

def dump_csv(config: PointConfiguration, path) -> None:
    """Write ``# key=value`` header lines then rows ``x1..xd,color,mark``.

    Floats use ``repr`` so a reload reproduces every coordinate exactly.
    """
    d = config.d
    with open(path, "w", newline="") as fh:
        for key, val in (("d", d), ("L", config.window.L), ("pad", config.window.pad),
                         ("p", config.p), ("seed", config.manifest.get("root_seed", "")),
                         ("eps", config.grid.eps)):
            fh.write(f"# {key}={val!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(d)] + ["color", "mark"])
        for x, b, u in zip(config.points.tolist(), config.black.tolist(), config.marks.tolist()):
            w.writerow([repr(c) for c in x] + [int(b), repr(u)])


def load_csv(path) -> PointConfiguration:
    header = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                header[key] = val
            else:
                break
        rows = list(csv.reader(fh))
    d = int(header["d"])
    window = Window(d, float(header["L"]), float(header["pad"]))
    grid = box_partition(window, float(header["eps"]))
    data = np.array(rows, dtype=float).reshape(-1, d + 2)
    pts = data[:, :d].copy()
    boxes = grid.flat(grid.box_of(pts)) if len(pts) else np.zeros(0, np.int64)
    order = np.argsort(boxes, kind="stable")
    seed = header.get("seed", "")
    manifest = {"root_seed": int(seed) if seed not in ("", "''") else None,
                "eps": grid.eps, "p": float(header["p"]), "source": str(Path(path))}
    return PointConfiguration(
        pts[order], data[order, d + 1].copy(), data[order, d].astype(bool),
        np.asarray(boxes)[order].astype(np.int64), float(header["p"]), window, grid, manifest,
    )
