"""Per-box influences on the box grid ``eps * Z^d``.

The influence of box ``x`` on an event is the probability that the event
changes when the content of ``x`` (points and marks) is replaced by an
independent sample. Profiles use a paired design: one base configuration
per trial and every box resampled once against it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .connectivity import EventSpec, evaluate, event_grid, raster_connects
from .errors import ParameterError
from .estimators import Estimate, event_threshold
from .geometry import locator
from .point_process import (PointConfiguration, Window, box_sample, resample_box, resample_seed,
                            sample_configuration)
from .runner import map_trials, trial_seed


def _holds(event, config):
    return event(config) if callable(event) else evaluate(config, event)


def _influence_trial(p, event, window, eps, box, seed):
    base = sample_configuration(window, p, seed, eps)
    f = int(base.grid.flat(box))
    alt = resample_box(base, box, resample_seed(seed, f, 0))
    return _holds(event, base) != _holds(event, alt)


def estimate_influence(p: float, spec, eps: float, box, trials: int, root_seed: int, d: int = 2,
                       window: Window | None = None, threads: int = 1) -> Estimate:
    """Monte Carlo influence of one box by full re-evaluation.

    ``spec`` is an :class:`EventSpec` or any callable ``config -> bool``.
    """
    if window is None:
        if not isinstance(spec, EventSpec):
            raise ParameterError("a window is required for callable events")
        window = Window.for_radius(d, spec.extent, eps)
    box = tuple(int(v) for v in box)
    vals = map_trials(partial(_influence_trial, p, spec, window, eps, box), trials, root_seed, threads)
    label = spec.label() if isinstance(spec, EventSpec) else getattr(spec, "label", "event")
    return Estimate.from_values(vals, seed=root_seed, event=str(label), params={"p": p, "eps": eps, "box": box})


# -- paired profile -------------------------------------------------------------

@dataclass
class InfluenceProfile:
    """Per-box influence estimates over a block of boxes.

    ``flips[t]`` lists the positions (into ``boxes``) whose resampling
    changed the event in trial ``t``.
    """

    eps: float
    p: float
    spec: EventSpec
    boxes: np.ndarray
    counts: np.ndarray
    trials: int
    seed: int
    flips: list = field(repr=False, default_factory=list)
    threshold: np.ndarray | None = field(repr=False, default=None)

    @property
    def mean(self) -> np.ndarray:
        return self.counts / self.trials

    @property
    def stderr(self) -> np.ndarray:
        t = self.trials
        m = self.mean
        return np.sqrt(m * (1 - m) * t / max(t - 1, 1) / t)

    def estimate(self, box) -> Estimate:
        i = self.position(box)
        return Estimate(float(self.mean[i]), float(self.stderr[i]), self.trials, self.seed, self.spec.label(),
                        {"p": self.p, "eps": self.eps, "box": tuple(int(v) for v in box)})

    def position(self, box) -> int:
        hit = np.flatnonzero(np.all(self.boxes == np.asarray(box), axis=1))
        if len(hit) == 0:
            raise ParameterError(f"box {tuple(box)} is not in the profile")
        return int(hit[0])

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in b): self.estimate(b) for b in self.boxes}

    def per_trial_sums(self, weights=None) -> np.ndarray:
        w = np.ones(len(self.boxes)) if weights is None else np.asarray(weights, float)
        return np.array([w[f].sum() for f in self.flips])

    def total(self, mask=None) -> Estimate:
        w = None if mask is None else np.asarray(mask, float)
        return Estimate.from_values(self.per_trial_sums(w), seed=self.seed, event=f"sum:{self.spec.label()}",
                                    params={"p": self.p, "eps": self.eps})

    def shell(self) -> np.ndarray:
        """Mask of the outermost layer of boxes in the profile."""
        lo, hi = self.boxes.min(axis=0), self.boxes.max(axis=0)
        return np.any((self.boxes == lo) | (self.boxes == hi), axis=1)

    def to_csv(self, path) -> None:
        d = self.boxes.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eps"] + [f"x{a + 1}" for a in range(d)] + ["mean", "stderr"])
            for b, m, s in zip(self.boxes, self.mean, self.stderr):
                w.writerow([repr(self.eps)] + [int(v) for v in b] + [repr(float(m)), repr(float(s))])


def profile_boxes(eps: float, radius: float, d: int) -> np.ndarray:
    """Box indices whose corner lies in ``[-radius, radius)^d``, lexicographic."""
    m = int(math.ceil(radius / eps - 1e-9))
    axes = [np.arange(-m, m)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1)


def paired_flips(config: PointConfiguration, spec: EventSpec, boxes: np.ndarray, seed: int) -> np.ndarray:
    """Positions in ``boxes`` whose resampling changes ``spec`` on ``config``.

    Box ``x`` is resampled with ``resample_seed(seed, flat(x), 0)``, exactly
    as :func:`resample_box` would. Only sites whose owner was removed, or
    that are closer to a new point than to their owner, can change colour,
    so each box is handled on the raster block within reach of it.
    """
    if spec.engine != "raster":
        raise ParameterError("paired profiles need the raster engine")
    grid, sets = event_grid(config, spec)
    h = grid.h
    d = config.d
    owner = grid.owner.ravel()
    dist2 = grid.dist2.ravel()
    want = config.black if spec.color == "black" else ~config.black
    site_color = want[owner].copy()
    base = raster_connects(site_color, sets)
    shape = np.asarray(sets.shape)
    allowed = sets.allowed.reshape(sets.shape)
    reach = float(np.sqrt(dist2[sets.allowed].max()))
    ilo = sets.lo
    region_lo, region_hi = ilo * h, (ilo + shape - 1) * h
    loc = locator(config)
    excluded = np.zeros(len(config), np.bool_)
    eps = config.grid.eps
    flats = config.grid.flat(boxes)
    starts = np.searchsorted(config.boxes, flats)
    ends = np.searchsorted(config.boxes, flats + 1)
    corners = boxes * eps
    gap = np.maximum(np.maximum(region_lo - (corners + eps), corners - region_hi), 0)
    near = np.sqrt(np.sum(gap ** 2, axis=1)) <= reach
    out = []
    site_idx = np.arange(shape.prod()).reshape(sets.shape)
    for i in np.flatnonzero(near):
        f = int(flats[i])
        new_pts, new_marks = box_sample(config.grid, f, resample_seed(seed, f, 0))
        a, b = starts[i], ends[i]
        if a == b and len(new_pts) == 0:
            continue
        lo = np.maximum(np.ceil((corners[i] - reach) / h - 1e-9).astype(np.int64) - ilo, 0)
        hi = np.minimum(np.floor((corners[i] + eps + reach) / h + 1e-9).astype(np.int64) - ilo + 1, shape)
        if np.any(hi <= lo):
            continue
        block = tuple(slice(l, u) for l, u in zip(lo, hi))
        sid = site_idx[block][allowed[block]]
        if len(sid) == 0:
            continue
        coords = (np.stack(np.unravel_index(sid, sets.shape), axis=1) + ilo) * h
        d2 = dist2[sid].copy()
        col = site_color[sid].copy()
        if b > a:
            gone = (owner[sid] >= a) & (owner[sid] < b)
            if gone.any():
                excluded[a:b] = True
                j, dj = loc.query(coords[gone], excluded)
                excluded[a:b] = False
                d2[gone] = dj
                col[gone] = want[j] if len(config) > b - a else False
        if len(new_pts):
            nd2 = np.sum((coords[:, None, :] - new_pts[None, :, :]) ** 2, axis=2)
            k = np.argmin(nd2, axis=1)
            closer = nd2[np.arange(len(sid)), k] < d2
            new_black = new_marks < config.p
            new_want = new_black if spec.color == "black" else ~new_black
            col[closer] = new_want[k[closer]]
        changed = col != site_color[sid]
        if not changed.any():
            continue
        s = sid[changed]
        site_color[s] = col[changed]
        if raster_connects(site_color, sets) != base:
            out.append(i)
        site_color[s] = ~col[changed]
    return np.array(out, np.int64)


def _profile_trial(p, spec, window, eps, boxes, with_threshold, seed):
    config = sample_configuration(window, p, seed, eps)
    flips = paired_flips(config, spec, boxes, seed)
    thr = event_threshold(config, spec) if with_threshold else math.nan
    return flips, thr


def influence_profile(p: float, spec: EventSpec, eps: float, trials: int, root_seed: int, d: int = 2,
                      radius: float | None = None, with_threshold: bool = False,
                      threads: int = 1) -> InfluenceProfile:
    """Paired-design influences of every box with corner in ``[-radius, radius)^d``.

    ``radius`` defaults to ``4 n``. The window covers the whole block, so
    every listed box is a real box of the sample; boxes farther from the
    event region than its largest owner distance are exactly non-influential
    in that trial and are skipped.
    """
    radius = 4 * spec.n if radius is None else radius
    window = Window.for_radius(d, max(spec.extent, radius), eps)
    boxes = profile_boxes(eps, radius, d)
    rows = map_trials(partial(_profile_trial, p, spec, window, eps, boxes, with_threshold), trials,
                      root_seed, threads)
    counts = np.zeros(len(boxes), np.int64)
    flips = []
    for f, _ in rows:
        counts[f] += 1
        flips.append(f)
    thr = np.array([t for _, t in rows]) if with_threshold else None
    return InfluenceProfile(eps, p, spec, boxes, counts, trials, root_seed, flips, thr)


def symmetry_orbit(box, d: int) -> list:
    """Images of a box under the symmetries of the cube centred at the origin.

    Box ``j`` covers ``[j, j+1)`` per axis, so reflection maps ``j`` to ``-j-1``.
    """
    import itertools
    b = np.asarray(box)
    seen = set()
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            img = tuple(int(b[perm[a]]) if signs[a] > 0 else int(-b[perm[a]] - 1) for a in range(d))
            seen.add(img)
    return sorted(seen)


@dataclass
class LowerBoundReport:
    """Derivative against half the influence sum, measured on the same samples."""

    eps: float
    derivative: Estimate
    influence_sum: Estimate
    tail: Estimate
    difference: Estimate

    @property
    def passed(self) -> bool:
        return self.difference.mean >= -3 * self.difference.stderr


def influence_sum_vs_derivative(p: float, spec: EventSpec, eps: float, trials: int, root_seed: int,
                                d: int = 2, dp: float = 0.02, threads: int = 1) -> LowerBoundReport:
    """Check ``d/dp P[A] >= 1/2 sum_x Inf_x`` at one box size.

    The sum runs over boxes in ``[-4n, 4n)^d``; ``tail`` is the contribution
    of its outermost layer of boxes.
    """
    prof = influence_profile(p, spec, eps, trials, root_seed, d, with_threshold=True, threads=threads)
    thr = prof.threshold
    deriv = ((thr >= p - dp / 2) & (thr < p + dp / 2)) / dp
    sums = prof.per_trial_sums()
    kw = dict(seed=root_seed, params={"p": p, "eps": eps, "dp": dp})
    return LowerBoundReport(eps, Estimate.from_values(deriv, event="finite_difference", **kw),
                            Estimate.from_values(sums, event="influence_sum", **kw),
                            prof.total(prof.shell()),
                            Estimate.from_values(deriv - 0.5 * sums, event="difference", **kw))


def influence_sweep(p: float, spec: EventSpec, trials: int, root_seed: int, eps_values=(1.0, 0.5, 0.25),
                    d: int = 2, threads: int = 1) -> list:
    """One :class:`LowerBoundReport` per box size, for the trend as ``eps`` shrinks."""
    return [influence_sum_vs_derivative(p, spec, e, trials, root_seed + i, d, threads=threads)
            for i, e in enumerate(eps_values)]


# -- exact single-box event -------------------------------------------------------

@dataclass(frozen=True)
class BoxHasBlack:
    """Event "box ``box`` of side ``eps`` contains a black point"."""

    box: tuple
    eps: float

    @property
    def label(self) -> str:
        return f"box_has_black({self.box})"

    def __call__(self, config: PointConfiguration) -> bool:
        f = int(config.grid.flat(self.box))
        a, b = np.searchsorted(config.boxes, [f, f + 1])
        return bool(config.black[a:b].any())


def box_has_black_closed_form(p: float, eps: float, d: int) -> tuple:
    """``(influence, derivative)`` of :class:`BoxHasBlack` in closed form."""
    lam = eps ** d
    q = 1 - math.exp(-p * lam)
    return 2 * q * (1 - q), lam * math.exp(-p * lam)


def box_has_black_enumerated(p: float, eps: float, d: int, max_points: int = 4) -> tuple:
    """Same quantities by summing over Poisson counts ``0..max_points``."""
    lam = eps ** d
    k = np.arange(max_points + 1)
    w = np.exp(-lam) * lam ** k / np.array([math.factorial(int(i)) for i in k])
    a = 1 - (1 - p) ** k
    inf = float(np.sum(w[:, None] * w[None, :] * (a[:, None] * (1 - a[None, :]) + (1 - a[:, None]) * a[None, :])))
    deriv = float(np.sum(w[1:] * k[1:] * (1 - p) ** (k[1:] - 1)))
    return inf, deriv
