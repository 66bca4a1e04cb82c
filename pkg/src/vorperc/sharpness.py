"""Differential-inequality diagnostics and the sequence dichotomy.

``mlem_check`` measures the smallest ratio ``theta_n' S_n / (n theta_n)``
on a table of connection probabilities. The remaining functions work on
families of increasing sequences ``f_n`` on a parameter interval that
satisfy ``f_n' >= (n / Sigma_n) f_n`` with ``Sigma_n = sum_{k<n} f_k``:
such families either decay exponentially in ``n`` or stay above a linear
function of the parameter, with the switch at ``beta_1``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, ParameterError, RefineStepError
from .estimators import Estimate, fit_decay

EXACT_TRIALS = 10 ** 15


# -- measured inequality ---------------------------------------------------------

class FunctionTheta:
    """Noise-free stand-in for a measured table: ``theta(p, n) = fn(p, n)``.

    ``theta(p, 0)`` is taken as 1. Derivatives are central differences.
    """

    trials = 0

    def __init__(self, fn):
        self.fn = fn

    def _value(self, p, n):
        return 1.0 if n == 0 else float(self.fn(p, n))

    def theta(self, p, n) -> Estimate:
        return Estimate(self._value(p, n), 0.0, EXACT_TRIALS)

    def derivative(self, p, n, dp) -> Estimate:
        return Estimate((self._value(p + dp / 2, n) - self._value(p - dp / 2, n)) / dp, 0.0, EXACT_TRIALS)

    def S(self, p, n) -> Estimate:
        return Estimate(sum(self._value(p, k) for k in range(n)), 0.0, EXACT_TRIALS)

    def mlem_ratio(self, p, n, dp) -> Estimate:
        r = self.derivative(p, n, dp).mean * self.S(p, n).mean / (n * self._value(p, n))
        return Estimate(r, 0.0, EXACT_TRIALS, params={"p": p, "n": n, "dp": dp})


@dataclass
class MlemReport:
    ratios: dict
    excluded: list
    c_hat: float
    c_stderr: float
    argmin: tuple | None

    @property
    def passed(self) -> bool:
        return bool(self.argmin is not None and self.c_hat > 3 * self.c_stderr)

    def rows(self) -> list:
        return [{"p": p, "n": n, "ratio": e.mean, "stderr": e.stderr} for (p, n), e in sorted(self.ratios.items())]


def mlem_check(table, ps, ns, dp: float) -> MlemReport:
    """Smallest ``theta_n' S_n / (n theta_n)`` over the ``(p, n)`` grid.

    Points with ``theta_n`` at or below ``5 / trials`` are excluded (and
    listed). The check passes when the minimum exceeds three of its own
    standard errors.
    """
    ratios, excluded = {}, []
    for p in ps:
        for n in ns:
            if n < 1:
                raise ParameterError("n must be >= 1")
            th = table.theta(p, n).mean
            if table.trials and th <= 5.0 / table.trials:
                excluded.append((p, n))
                continue
            ratios[(p, n)] = table.mlem_ratio(p, n, dp)
    if not ratios:
        return MlemReport(ratios, excluded, math.nan, math.nan, None)
    key = min(ratios, key=lambda k: ratios[k].mean)
    return MlemReport(ratios, excluded, ratios[key].mean, ratios[key].stderr, key)


# -- sequence families ------------------------------------------------------------

@dataclass
class SequenceFamily:
    """``values[n, j] = f_n(grid[j])`` for ``n = 0..N``."""

    alpha0: float
    alpha1: float
    M: float
    grid: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, float)
        self.values = np.asarray(self.values, float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.grid):
            raise ParameterError("values must have shape (N + 1, len(grid))")

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    def sigma(self) -> np.ndarray:
        """``sigma[n, j] = sum_{k<n} f_k(grid[j])`` for ``n = 0..N``."""
        c = np.cumsum(self.values, axis=0)
        return np.vstack([np.zeros(len(self.grid)), c[:-1]])

    def hypothesis_margin(self) -> float:
        """Smallest ``slope - min((n / Sigma_n) f_n at both ends)`` over grid
        intervals where ``f_n`` stays below the cap (``n >= 1``)."""
        f = self.values[1:]
        sig = self.sigma()[1:]
        n = np.arange(1, self.N + 1)[:, None]
        g = n * f / sig
        slope = np.diff(f, axis=1) / np.diff(self.grid)
        need = np.minimum(g[:, :-1], g[:, 1:])
        free = f[:, 1:] < self.M * (1 - 1e-12)
        return float(np.min(np.where(free, slope - need, np.inf))) if free.any() else math.inf

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["beta", "n", "f"])
            for j, b in enumerate(self.grid):
                for n in range(self.N + 1):
                    w.writerow([repr(float(b)), n, repr(float(self.values[n, j]))])


def _euler(f0, rate_slack, M, h, n_steps, every):
    f = f0.copy()
    n = np.arange(len(f), dtype=float)
    out = [f.copy()]
    overshoot = 0.0
    for s in range(1, n_steps + 1):
        sig = np.concatenate([[0.0], np.cumsum(f)[:-1]])
        step = np.zeros_like(f)
        step[1:] = h * rate_slack * n[1:] / sig[1:] * f[1:]
        f = f + step
        over = f.max() / M - 1
        if over > overshoot:
            overshoot = over
        np.minimum(f, M, out=f)
        if s % every == 0:
            out.append(f.copy())
    return np.array(out).T, overshoot


def integrate_lemma_system(M: float, alpha0: float, alpha1: float, N: int, boundary, slack: float = 1.0,
                           step: float = 1e-4, grid_step: float = 0.002, tol: float = 1e-4,
                           max_halvings: int = 6) -> SequenceFamily:
    """Integrate ``f_n' = slack (n / Sigma_n) f_n`` from ``alpha0`` to ``alpha1``, capped at ``M``.

    ``boundary`` gives ``f_n(alpha0)`` for ``n = 0..N`` (a scalar means all
    equal); ``f_0`` stays constant. Explicit Euler runs at ``step`` and
    ``step / 2``; the step is halved until the two agree to ``tol``
    (relative) and no step overshoots the cap by more than 1%. The result is
    the Richardson combination of the last pair, clipped to ``[0, M]``.
    """
    if slack < 1:
        raise ParameterError("slack must be >= 1")
    if not alpha1 > alpha0:
        raise ParameterError("need alpha1 > alpha0")
    f0 = np.broadcast_to(np.asarray(boundary, float), (N + 1,)).copy()
    if np.any(f0 <= 0) or np.any(f0 > M):
        raise ParameterError("boundary values must lie in (0, M]")
    n_grid = int(round((alpha1 - alpha0) / grid_step))
    if abs(n_grid * grid_step - (alpha1 - alpha0)) > 1e-9:
        raise ParameterError("grid_step must divide the parameter interval")
    grid = alpha0 + grid_step * np.arange(n_grid + 1)
    every = max(1, int(round(grid_step / step)))
    coarse, over_c = _euler(f0, slack, M, grid_step / every, n_grid * every, every)
    for _ in range(max_halvings + 1):
        every *= 2
        fine, over_f = _euler(f0, slack, M, grid_step / every, n_grid * every, every)
        rel = float(np.max(np.abs(fine - coarse) / np.maximum(np.abs(fine), 1e-300)))
        if rel < tol and max(over_c, over_f) <= 0.01:
            vals = np.clip(2 * fine - coarse, 0, M)
            vals[0] = f0[0]
            return SequenceFamily(alpha0, alpha1, M, grid, vals,
                                  {"step": grid_step / every, "self_convergence": rel, "slack": slack})
        coarse, over_c = fine, over_f
    raise RefineStepError(f"no self-convergence below {tol} after {max_halvings} halvings (last {rel:.2e})")


@dataclass
class Beta1Result:
    beta1: float
    reached: bool
    proxy: np.ndarray
    grid: np.ndarray
    tail: tuple


def beta1_estimate(family: SequenceFamily, tol: float = 0.02, tail: tuple | None = None) -> Beta1Result:
    """Smallest grid parameter where ``max_{n in tail} log Sigma_n / log n >= 1 - tol``.

    ``tail`` defaults to ``[N/2, N]``. If the proxy never gets there the
    result is ``alpha1`` with ``reached = False``.
    """
    N = family.N
    lo, hi = tail or (max(2, N // 2), N)
    if lo < 2 or hi > N or lo > hi:
        raise ParameterError(f"bad tail range {lo}..{hi} for N={N}")
    sig = family.sigma()[lo:hi + 1]
    n = np.arange(lo, hi + 1)[:, None]
    proxy = np.max(np.log(sig) / np.log(n), axis=0)
    ok = np.flatnonzero(proxy >= 1 - tol)
    if len(ok) == 0:
        return Beta1Result(float(family.alpha1), False, proxy, family.grid, (lo, hi))
    return Beta1Result(float(family.grid[ok[0]]), True, proxy, family.grid, (lo, hi))


@dataclass
class DichotomyReport:
    beta1: float
    margin: float
    tolerance: float
    below: list
    above: list

    @property
    def passed(self) -> bool:
        return all(r < 0 for _, r in self.below) and all(f >= need for _, f, need in self.above)

    def to_json(self) -> str:
        return json.dumps({"beta1": self.beta1, "margin": self.margin, "tolerance": self.tolerance,
                           "passed": self.passed,
                           "below": [{"beta": b, "rate": r} for b, r in self.below],
                           "above": [{"beta": b, "f_N": f, "bound": need} for b, f, need in self.above]}, indent=1)


def verify_lemma_dichotomy(family: SequenceFamily, beta1: float, margin: float = 0.05,
                           tol: float = 0.02) -> DichotomyReport:
    """Both conclusions on the grid, with ``f_N`` standing in for the limit.

    Below ``beta1 - margin`` the log-linear fit of ``n -> f_n`` must have a
    negative slope; above ``beta1 + margin``, ``f_N >= beta - beta1 - tol``.
    """
    g = family.grid
    lower = np.flatnonzero(g <= beta1 - margin + 1e-12)
    upper = np.flatnonzero(g >= beta1 + margin - 1e-12)
    if len(lower) == 0 and len(upper) == 0:
        raise ParameterError("margin leaves no grid point on either side of beta1")
    below = []
    ns = list(range(1, family.N + 1))
    for j in lower:
        ests = [Estimate(float(family.values[n, j]), 0.0, EXACT_TRIALS) for n in ns]
        try:
            rate = fit_decay(ests, ns).rate
        except FitError:
            rate = math.nan
        below.append((float(g[j]), rate))
    above = [(float(g[j]), float(family.values[-1, j]), float(g[j] - beta1 - tol)) for j in upper]
    return DichotomyReport(beta1, margin, tol, below, above)


def family_from_theta(table, ps, ns_max: int, c_hat: float) -> SequenceFamily:
    """``f_n = theta_n / c_hat`` on the grid ``ps`` (``theta_0 = 1``), cap ``1 / c_hat``."""
    if not c_hat > 0:
        raise ParameterError("c_hat must be positive")
    ps = np.asarray(ps, float)
    vals = np.array([[1.0 if n == 0 else table.theta(p, n).mean for p in ps] for n in range(ns_max + 1)])
    return SequenceFamily(float(ps[0]), float(ps[-1]), 1 / c_hat, ps, vals / c_hat, {"c_hat": c_hat})
