"""Monte Carlo estimators and diagnostics.

Configurations for trial ``t`` come from ``trial_seed(root_seed, t)``.
Curves in ``p`` use the shared-mark coupling: a configuration is sampled
once and each increasing event is reduced to its exact threshold level, so
every ``p`` on a grid is evaluated on the same samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from .connectivity import (EventSpec, box_crossing, delaunay_event, evaluate, event_grid,
                           raster_connects, raster_thresholds, sphere_thresholds, window_for)
from .errors import FitError, ParameterError
from .geometry import default_pitch, delaunay_adjacency_2d
from .point_process import PointConfiguration, Window, _check_p, sample_configuration
from .runner import map_trials

LOG_SAFETY = 5.0


@dataclass
class Estimate:
    """Sample mean of per-trial values with ``stderr = sd / sqrt(trials)``."""

    mean: float
    stderr: float
    trials: int
    seed: int | None = None
    event: str = ""
    params: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, values, **kw) -> "Estimate":
        v = np.asarray(values, dtype=float)
        n = len(v)
        if n == 0:
            raise ParameterError("no trials")
        sd = float(v.std(ddof=1)) if n > 1 else 0.0
        return cls(float(v.mean()), sd / math.sqrt(n), n, **kw)

    def row(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "trials": self.trials, "seed": self.seed,
                "event": self.event, **self.params}


# -- per-trial work (module level so worker processes can pickle it) --------

def _event_trial(p, spec, d, eps, seed):
    config = sample_configuration(window_for(spec, d, eps), p, seed, eps)
    return evaluate(config, spec)


def _threshold_trial(spec, d, seed):
    config = sample_configuration(window_for(spec, d), 0.5, seed)
    return event_threshold(config, spec)


def _sphere_trial(d, n_max, h, seed):
    config = sample_configuration(Window.for_radius(d, n_max + 1.0), 0.5, seed)
    return sphere_thresholds(config, n_max, h)


def _pivotal_trial(p, spec, d, seed):
    config = sample_configuration(window_for(spec, d), p, seed)
    return pivotal_count(config, spec)


def _russo_trial(p, spec, d, dp, seed):
    config = sample_configuration(window_for(spec, d), p, seed)
    thr = event_threshold(config, spec)
    fd = float(p - dp / 2 <= thr < p + dp / 2) / dp
    return fd, pivotal_count(config, spec)


def _pair_trial(p, specs, d, seed):
    ext = max(s.extent for s in specs)
    config = sample_configuration(Window.for_radius(d, ext), p, seed)
    return tuple(evaluate(config, s) for s in specs)


# -- events ------------------------------------------------------------------

def estimate_event(p: float, spec: EventSpec, trials: int, root_seed: int, d: int = 2,
                   eps: float = 1.0, threads: int = 1) -> Estimate:
    """Bernoulli mean of ``evaluate`` over independent configurations."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    vals = map_trials(partial(_event_trial, p, spec, d, eps), trials, root_seed, threads)
    return Estimate.from_values(vals, seed=root_seed, event=spec.label(),
                                params={"p": p, "n": spec.n, "d": d, "h": spec.pitch, "engine": spec.engine})


def event_threshold(config: PointConfiguration, spec: EventSpec) -> float:
    """Mark level above which the increasing event ``spec`` holds on ``config``."""
    if not spec.increasing:
        raise ParameterError("thresholds are defined for increasing (black) events")
    if spec.engine == "raster":
        grid, sets = event_grid(config, spec)
        return float(raster_thresholds(grid, sets, config.marks)[0])
    graph = delaunay_adjacency_2d(config)
    marks = np.sort(config.marks)

    def holds(k):
        return delaunay_event(replace(config, black=config.marks <= marks[k]), spec, graph)

    if len(marks) == 0 or not holds(len(marks) - 1):
        return math.inf
    lo, hi = -1, len(marks) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return float(marks[hi])


def threshold_samples(spec: EventSpec, trials: int, root_seed: int, d: int = 2, threads: int = 1) -> np.ndarray:
    return np.array(map_trials(partial(_threshold_trial, spec, d), trials, root_seed, threads))


def curve_estimate(thresholds: np.ndarray, p: float, **kw) -> Estimate:
    return Estimate.from_values(np.asarray(thresholds) < p, **kw)


@dataclass
class PitchReport:
    coarse: Estimate
    fine: Estimate
    shift: float
    shift_stderr: float

    @property
    def passed(self) -> bool:
        """Halving the pitch moves the estimate by less than one standard error."""
        return abs(self.shift) < max(self.coarse.stderr, 1e-300)


def pitch_sweep(p: float, spec: EventSpec, trials: int, root_seed: int, d: int = 2,
                threads: int = 1) -> PitchReport:
    """Estimate ``spec`` at its pitch ``h`` and at ``h/2`` on the same configurations."""
    if spec.engine != "raster":
        raise ParameterError("the pitch sweep applies to the raster engine")
    specs = (spec, replace(spec, h=spec.pitch / 2))
    rows = np.array(map_trials(partial(_pair_trial, p, specs, d), trials, root_seed, threads), float)
    kw = dict(seed=root_seed, params={"p": p, "n": spec.n, "d": d})
    coarse = Estimate.from_values(rows[:, 0], event=f"{spec.label()}@h={spec.pitch:g}", **kw)
    fine = Estimate.from_values(rows[:, 1], event=f"{spec.label()}@h={spec.pitch / 2:g}", **kw)
    diff = Estimate.from_values(rows[:, 1] - rows[:, 0])
    return PitchReport(coarse, fine, diff.mean, diff.stderr)


class ThetaTable:
    """``theta_n(p)`` for all ``n <= n_max`` and any ``p`` from shared samples.

    ``thresholds[t, n]`` is the level above which the origin reaches
    ``S_n`` in trial ``t``.
    """

    def __init__(self, thresholds: np.ndarray, seed=None, d: int = 2, h: float | None = None):
        self.thresholds = np.asarray(thresholds, float)
        self.seed = seed
        self.d = d
        self.h = h or default_pitch()

    @classmethod
    def sample(cls, d: int, n_max: int, trials: int, root_seed: int, h: float | None = None,
               threads: int = 1) -> "ThetaTable":
        rows = map_trials(partial(_sphere_trial, d, n_max, h), trials, root_seed, threads)
        return cls(np.array(rows), root_seed, d, h)

    @property
    def trials(self) -> int:
        return self.thresholds.shape[0]

    @property
    def n_max(self) -> int:
        return self.thresholds.shape[1] - 1

    def _est(self, values, p, n, what):
        return Estimate.from_values(values, seed=self.seed, event=f"{what}(n={n})",
                                    params={"p": p, "n": n, "d": self.d, "h": self.h})

    def indicators(self, p: float, n: int) -> np.ndarray:
        _check_p(p)
        if not 0 <= n <= self.n_max:
            raise ParameterError(f"n={n} outside 0..{self.n_max}")
        return self.thresholds[:, n] < p

    def theta(self, p: float, n: int) -> Estimate:
        return self._est(self.indicators(p, n), p, n, "origin_to_sphere")

    def derivative(self, p: float, n: int, dp: float) -> Estimate:
        """Central difference over ``[p - dp/2, p + dp/2)`` on shared samples."""
        t = self.thresholds[:, n]
        return self._est(((t >= p - dp / 2) & (t < p + dp / 2)) / dp, p, n, "dtheta")

    def partial_sum(self, p: float, n: int) -> np.ndarray:
        """Per-trial ``1 + sum_{0<k<n} 1[0 <-> S_k]``; its mean is ``S_n(p)``.

        The ``k = 0`` term is taken as 1, so ``S_1 = 1``.
        """
        return 1 + np.sum(self.thresholds[:, 1:n] < p, axis=1)

    def S(self, p: float, n: int) -> Estimate:
        return self._est(self.partial_sum(p, n), p, n, "S")

    def mlem_ratio(self, p: float, n: int, dp: float) -> Estimate:
        """``theta_n' S_n / (n theta_n)`` with a delta-method standard error."""
        t = self.thresholds[:, n]
        dv = ((t >= p - dp / 2) & (t < p + dp / 2)) / dp
        iv = (t < p).astype(float)
        sv = self.partial_sum(p, n).astype(float)
        md, mi, ms = dv.mean(), iv.mean(), sv.mean()
        if mi == 0:
            return Estimate(math.nan, math.nan, self.trials, self.seed, f"mlem_ratio(n={n})", {"p": p, "n": n})
        r = md * ms / (n * mi)
        psi = r * ((dv / md if md > 0 else 0 * dv) + sv / ms - iv / mi)
        se = float(np.std(psi, ddof=1) / math.sqrt(self.trials))
        if md == 0:
            se = float(np.std(dv, ddof=1) / math.sqrt(self.trials)) * ms / (n * mi)
        return Estimate(float(r), se, self.trials, self.seed, f"mlem_ratio(n={n})", {"p": p, "n": n, "dp": dp})


# -- pivotality ---------------------------------------------------------------

def pivotal_count(config: PointConfiguration, spec: EventSpec) -> int:
    """Number of points whose colour decides ``spec`` (flip changes the outcome)."""
    if spec.engine == "delaunay2d":
        graph = delaunay_adjacency_2d(config)
        count = 0
        for j in range(len(config)):
            if delaunay_event(config.recolored(j, True), spec, graph) != delaunay_event(
                    config.recolored(j, False), spec, graph):
                count += 1
        return count
    grid, sets = event_grid(config, spec)
    color = config.black if spec.color == "black" else ~config.black
    owner = grid.owner.ravel()
    site_color = color[owner]
    base = raster_connects(site_color, sets)
    inside = np.flatnonzero(sets.allowed)
    order = inside[np.argsort(owner[inside], kind="stable")]
    owners, starts = np.unique(owner[order], return_index=True)
    ends = np.append(starts[1:], len(order))
    # flipping towards the current outcome cannot change it
    wanted = color[owners] if base else ~color[owners]
    count = 0
    for j, a, b in zip(owners[wanted], starts[wanted], ends[wanted]):
        sites = order[a:b]
        site_color[sites] = not base
        if raster_connects(site_color, sets) != base:
            count += 1
        site_color[sites] = base
    return count


def estimate_pivotal(p: float, spec: EventSpec, trials: int, root_seed: int, d: int = 2,
                     threads: int = 1) -> Estimate:
    vals = map_trials(partial(_pivotal_trial, p, spec, d), trials, root_seed, threads)
    return Estimate.from_values(vals, seed=root_seed, event=f"pivotal:{spec.label()}",
                                params={"p": p, "n": spec.n, "d": d, "h": spec.pitch})


@dataclass
class RussoReport:
    p: float
    dp: float
    derivative: Estimate
    pivotal: Estimate
    difference: Estimate

    @property
    def passed(self) -> bool:
        return abs(self.difference.mean) <= 3 * self.difference.stderr


def russo_check(p: float, spec: EventSpec, trials: int, root_seed: int, d: int = 2, dp: float = 0.02,
                threads: int = 1) -> RussoReport:
    """Finite-difference derivative against the expected pivotal count.

    Both are measured on the same samples, so the comparison uses the
    standard error of the per-trial difference.
    """
    rows = np.array(map_trials(partial(_russo_trial, p, spec, d, dp), trials, root_seed, threads), float)
    kw = dict(seed=root_seed, params={"p": p, "dp": dp, "n": spec.n, "d": d})
    return RussoReport(p, dp, Estimate.from_values(rows[:, 0], event="finite_difference", **kw),
                       Estimate.from_values(rows[:, 1], event="pivotal", **kw),
                       Estimate.from_values(rows[:, 0] - rows[:, 1], event="difference", **kw))


# -- decay -------------------------------------------------------------------

@dataclass
class DecayFit:
    """Least-squares line ``log theta_n = intercept + rate * n``.

    ``rate`` is negative for decaying sequences.
    """

    rate: float
    intercept: float
    n_min: float
    n_max: float
    residual: float
    rate_stderr: float
    ns: list

    @property
    def decay_constant(self) -> float:
        return -self.rate


def fit_decay(estimates, ns=None, min_points: int = 4) -> DecayFit:
    """Fit ``log mean`` against ``n`` over estimates with ``mean > 5/trials``.

    ``rate_stderr`` is the larger of the regression standard error and the
    Monte Carlo error propagated through the log (treating points as
    independent).
    """
    ests = list(estimates)
    if ns is None:
        ns = [e.params["n"] for e in ests]
    pairs = [(float(n), e) for n, e in zip(ns, ests) if e.mean > LOG_SAFETY / e.trials]
    if len(pairs) < min_points:
        raise FitError(f"only {len(pairs)} usable points (need {min_points})", [n for n, _ in pairs])
    x = np.array([n for n, _ in pairs])
    y = np.log([e.mean for _, e in pairs])
    sy = np.array([e.stderr / e.mean for _, e in pairs])
    xc = x - x.mean()
    sxx = float(np.sum(xc ** 2))
    slope = float(np.sum(xc * (y - y.mean())) / sxx)
    icpt = float(y.mean() - slope * x.mean())
    res = y - (icpt + slope * x)
    rss = float(np.sum(res ** 2))
    se_reg = math.sqrt(rss / (len(x) - 2) / sxx) if len(x) > 2 else 0.0
    se_mc = math.sqrt(float(np.sum((xc / sxx) ** 2 * sy ** 2)))
    return DecayFit(slope, icpt, float(x.min()), float(x.max()), rss, max(se_reg, se_mc), x.tolist())


@dataclass
class GrowthFit:
    """Least-squares line ``theta_n(p) = intercept + slope * (p - p_c)`` above ``p_c``."""

    slope: float
    slope_stderr: float
    intercept: float
    p_c: float
    n: int
    ps: list


def fit_linear_growth(table, p_c: float, n: int, width: float = 0.1, step: float = 0.01) -> GrowthFit:
    """Slope of ``theta_n`` on the grid ``p_c + step, ..., p_c + width``.

    A finite-size stand-in for the constant of a linear lower bound above the
    critical point; there is no reference value to compare it with. Points
    share samples, so the slope error is computed per trial from the
    regression weights applied to the indicator rows.
    """
    k = int(round(width / step))
    if k < 2:
        raise ParameterError("need at least two grid points above p_c")
    ps = [p_c + step * (i + 1) for i in range(k)]
    if ps[-1] > 1:
        raise ParameterError("grid leaves [0, 1]")
    ind = np.stack([table.indicators(p, n) for p in ps], axis=1).astype(float)
    x = np.array(ps) - p_c
    w = (x - x.mean()) / np.sum((x - x.mean()) ** 2)
    per_trial = ind @ w
    slope = float(per_trial.mean())
    se = float(per_trial.std(ddof=1) / math.sqrt(len(per_trial)))
    icpt = float(ind.mean(axis=0).mean() - slope * x.mean())
    return GrowthFit(slope, se, icpt, p_c, n, ps)


# -- critical point -------------------------------------------------------------

@dataclass
class PcResult:
    interval: tuple
    root: float
    root_stderr: float
    steps: list
    sizes: tuple
    trials: int
    criterion: str


def _bisect(g, lo, hi, resolution):
    glo, ghi = g(lo), g(hi)
    steps = [(lo, glo), (hi, ghi)]
    if not (glo < 0 < ghi):
        raise ParameterError(f"bracket [{lo}, {hi}] does not bracket the critical point "
                             f"(criterion {glo:+.4f}, {ghi:+.4f})")
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        steps.append((mid, gm))
        if gm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), steps


def estimate_pc(d: int = 2, engine: str = "raster", trials: int = 2000, root_seed: int = 0,
                sizes=None, bracket=(0.3, 0.7), tol: float = 0.02, h: float | None = None,
                threads: int = 1, resolution: float = 1e-4) -> PcResult:
    """Bisection for the critical parameter on shared-mark samples.

    ``d == 2``: the criterion is the mean over two box sizes of the
    left-right crossing probability minus 1/2. ``d == 3``: the criterion is
    the change of the log-log slope of ``theta_n`` between consecutive size
    pairs (negative below criticality, where decay steepens; positive above,
    where it flattens).

    The reported interval is centred on the bisection root with half-width
    ``max(tol/2, 3 * root_stderr)``; ``root_stderr`` is the criterion's
    standard error divided by its slope at the root.
    """
    if d not in (2, 3):
        raise ParameterError("estimate_pc supports d in {2, 3}")
    if d == 2:
        sizes = tuple(sizes or (8, 16))
        if len(sizes) != 2:
            raise ParameterError("d=2 criterion needs two sizes")
        thr = [threshold_samples(box_crossing(n, engine=engine, h=h), trials, root_seed + i, d, threads)
               for i, n in enumerate(sizes)]

        def values(p):
            return 0.5 * ((thr[0] < p).astype(float) + (thr[1] < p))

        def g(p):
            return float(values(p).mean() - 0.5)

        criterion = "crossing"
    else:
        if engine != "raster":
            raise ParameterError("d=3 needs the raster engine")
        sizes = tuple(sizes or (2, 4, 8))
        if len(sizes) != 3:
            raise ParameterError("d=3 criterion needs three sizes")
        table = ThetaTable.sample(d, max(sizes), trials, root_seed, h, threads)
        n0, n1, n2 = sizes
        w1, w2 = math.log(n1 / n0), math.log(n2 / n1)

        def g(p):
            th = [max(table.theta(p, n).mean, 0.5 / trials) for n in sizes]
            s1 = (math.log(th[1]) - math.log(th[0])) / w1
            s2 = (math.log(th[2]) - math.log(th[1])) / w2
            return s2 - s1

        def values(p):
            # linearised per-trial contribution of g, for its standard error
            th = np.array([max(table.theta(p, n).mean, 0.5 / trials) for n in sizes])
            ind = np.stack([table.indicators(p, n) for n in sizes], axis=1)
            coef = np.array([1 / w1, -1 / w1 - 1 / w2, 1 / w2]) / th
            return ind @ coef

        criterion = "log_slope_flattening"
    root, steps = _bisect(g, bracket[0], bracket[1], resolution)
    delta = 0.02
    slope = (g(root + delta) - g(root - delta)) / (2 * delta)
    v = values(root)
    se_g = float(np.std(v, ddof=1) / math.sqrt(len(v)))
    if d == 2:
        se_g = math.sqrt(float(np.var((thr[0] < root), ddof=1) + np.var((thr[1] < root), ddof=1)) / trials) / 2
    root_se = se_g / slope if slope > 0 else math.inf
    half = max(tol / 2, 3 * root_se) * (1 - 1e-12)
    return PcResult((root - half, root + half), root, root_se, steps, sizes, trials, criterion)


# -- correlation diagnostics -------------------------------------------------------

@dataclass
class FKGReport:
    p_a: Estimate
    p_b: Estimate
    p_ab: Estimate
    gap: float
    gap_stderr: float
    direction: str

    @property
    def passed(self) -> bool:
        if self.direction == ">=":
            return self.gap >= -3 * self.gap_stderr
        return self.gap <= 3 * self.gap_stderr


def fkg_check(p: float, spec_a: EventSpec, spec_b: EventSpec, trials: int, root_seed: int, d: int = 2,
              threads: int = 1) -> FKGReport:
    """``P[A and B]`` against ``P[A] P[B]`` on shared samples.

    Two increasing (or two decreasing) events must satisfy ``>=``; a mixed
    pair must satisfy ``<=``. ``gap = P[AB] - P[A]P[B]`` with a delta-method
    standard error.
    """
    rows = np.array(map_trials(partial(_pair_trial, p, (spec_a, spec_b), d), trials, root_seed, threads), float)
    a, b = rows[:, 0], rows[:, 1]
    pa, pb = a.mean(), b.mean()
    psi = a * b - pb * a - pa * b
    gap = float((a * b).mean() - pa * pb)
    se = float(psi.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    kw = dict(seed=root_seed, params={"p": p, "d": d})
    direction = ">=" if spec_a.increasing == spec_b.increasing else "<="
    return FKGReport(Estimate.from_values(a, event=spec_a.label(), **kw),
                     Estimate.from_values(b, event=spec_b.label(), **kw),
                     Estimate.from_values(a * b, event="both", **kw), gap, se, direction)


@dataclass
class SqrtTrickReport:
    sides: dict
    union: Estimate
    bound: float
    slack: float
    slack_stderr: float

    @property
    def passed(self) -> bool:
        return self.slack >= -3 * self.slack_stderr


def sqrt_trick_check(p: float, k: float, n: float, trials: int, root_seed: int, h: float | None = None,
                     threads: int = 1) -> SqrtTrickReport:
    """One of four increasing events covering a likely union is itself likely.

    The events are "``B_k`` is joined inside ``[-n, n]^2`` to side s" for the
    four sides; the check is ``max_s P[E_s] >= 1 - (1 - P[union])^(1/4)``.
    """
    if not k < n:
        raise ParameterError("need k < n")
    sides = ("left", "right", "bottom", "top")
    specs = tuple(EventSpec("ball_to_side", n, r=k, side=s, h=h) for s in sides)
    rows = np.array(map_trials(partial(_pair_trial, p, specs, 2), trials, root_seed, threads), float)
    union = rows.max(axis=1)
    u = union.mean()
    means = rows.mean(axis=0)
    best = int(np.argmax(means))
    bound = 1 - (1 - u) ** 0.25
    if u < 1:
        psi = rows[:, best] - 0.25 * (1 - u) ** -0.75 * union
    else:
        psi = rows[:, best]
    se = float(psi.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    kw = dict(seed=root_seed, params={"p": p, "k": k, "n": n})
    return SqrtTrickReport({s: Estimate.from_values(rows[:, i], event=specs[i].label(), **kw)
                            for i, s in enumerate(sides)},
                           Estimate.from_values(union, event="union", **kw), bound, float(means[best] - bound), se)
