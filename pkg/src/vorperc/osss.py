"""Variance bound for decision trees on product spaces.

For a function ``f`` of independent coordinates and an algorithm that
determines it, ``Var f <= sum_i delta_i Inf_i`` where ``delta_i`` is the
probability that coordinate ``i`` is read and ``Inf_i`` the probability
that resampling coordinate ``i`` changes ``f``.

Finite instances are checked exactly by enumeration (rational arithmetic
when the probabilities are :class:`fractions.Fraction`); the Voronoi event
``{0 <-> S_n}`` with the exploration algorithm is checked by Monte Carlo.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import partial

import numpy as np

from .connectivity import origin_to_sphere
from .errors import ParameterError, ResourceError, ValidationError
from .exploration import run_Tk
from .point_process import Window, box_partition, sample_configuration
from .runner import map_trials
from .tensor import influence_profile

ENUMERATION_BUDGET = 10 ** 7


# -- finite product spaces -----------------------------------------------------

def leaf(value: int) -> dict:
    return {"leaf": int(value)}


def node(coord: int, children) -> dict:
    return {"query": int(coord), "children": list(children)}


@dataclass
class FiniteProductSpace:
    """Coordinates ``i`` with outcomes ``0..alphabets[i]-1``, a 0/1 truth
    table indexed by outcome tuples, and a decision tree.

    Tree nodes are ``{"query": i, "children": [...]}`` (one child per
    outcome of ``i``) or ``{"leaf": v}``.
    """

    probs: list
    table: np.ndarray
    tree: dict

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.int64)
        if self.table.ndim != len(self.probs):
            raise ValidationError("truth table rank must equal the coordinate count")
        for i, pr in enumerate(self.probs):
            if len(pr) != self.table.shape[i]:
                raise ValidationError(f"coordinate {i}: {len(pr)} probabilities for {self.table.shape[i]} outcomes")
            if any(q < 0 for q in pr):
                raise ValidationError(f"coordinate {i}: negative probability")
            total = sum(pr)
            if (total != 1) if isinstance(total, Fraction) else abs(total - 1) > 1e-12:
                raise ValidationError(f"coordinate {i}: probabilities sum to {total}")
        if not np.isin(self.table, (0, 1)).all():
            raise ValidationError("truth table must be 0/1")

    @property
    def n_coords(self) -> int:
        return len(self.probs)

    @property
    def alphabets(self) -> tuple:
        return self.table.shape

    def validate_tree(self) -> None:
        """Every leaf's subcube must be constant and equal to the leaf value."""

        def walk(t, fixed, seen):
            if "leaf" in t:
                cube = self.table[tuple(fixed)]
                if not np.all(cube == t["leaf"]):
                    raise ValidationError(f"leaf {t['leaf']} at {fixed} does not determine f")
                return
            i = t.get("query")
            if i is None or not 0 <= i < self.n_coords:
                raise ValidationError(f"bad query node {t}")
            if i in seen:
                raise ValidationError(f"coordinate {i} queried twice on one path")
            ch = t["children"]
            if len(ch) != self.alphabets[i]:
                raise ValidationError(f"node on {i} needs {self.alphabets[i]} children")
            for a, c in enumerate(ch):
                f = list(fixed)
                f[i] = a
                walk(c, f, seen | {i})

        walk(self.tree, [slice(None)] * self.n_coords, frozenset())

    def to_json(self) -> str:
        def enc(q):
            return str(q) if isinstance(q, Fraction) else q

        return json.dumps({"alphabets": list(self.alphabets), "probs": [[enc(q) for q in pr] for pr in self.probs],
                           "table": self.table.ravel().tolist(), "tree": self.tree})

    @classmethod
    def from_json(cls, text: str) -> "FiniteProductSpace":
        doc = json.loads(text)

        def dec(q):
            return Fraction(q) if isinstance(q, str) else q

        probs = [[dec(q) for q in pr] for pr in doc["probs"]]
        table = np.asarray(doc["table"], np.int64).reshape(doc["alphabets"])
        return cls(probs, table, doc["tree"])


@dataclass
class OSSSResult:
    variance: object
    revealments: list
    influences: list

    @property
    def rhs(self):
        return sum(d * i for d, i in zip(self.revealments, self.influences))

    @property
    def slack(self):
        return self.rhs - self.variance


def _weights(probs):
    """Product-measure weight array over all outcome tuples (object dtype)."""
    w = np.array([1], dtype=object).reshape(())
    for pr in probs:
        w = np.multiply.outer(w, np.array(pr, dtype=object))
    return w


def exact_osss(space: FiniteProductSpace) -> OSSSResult:
    """Variance, revealments and resampling influences by full enumeration."""
    total = math.prod(space.alphabets)
    if total * max(space.alphabets) > ENUMERATION_BUDGET:
        raise ResourceError(f"{total} outcomes exceed the enumeration budget")
    space.validate_tree()
    f = space.table.astype(object)
    w = _weights(space.probs)
    mean = np.sum(w * f)
    var = np.sum(w * f * f) - mean * mean
    infl = []
    for i, pr in enumerate(space.probs):
        # P[f(w) != f(w with coordinate i resampled)]
        rest = _weights([q for j, q in enumerate(space.probs) if j != i])
        fi = np.moveaxis(space.table, i, -1)
        diff = fi[..., :, None] != fi[..., None, :]
        pp = np.multiply.outer(np.array(pr, dtype=object), np.array(pr, dtype=object))
        infl.append(np.sum(rest * (diff * pp).sum(axis=(-1, -2))))
    reveal = [0] * space.n_coords

    def walk(t, weight):
        if "leaf" in t:
            return
        i = t["query"]
        reveal[i] = reveal[i] + weight
        for a, c in enumerate(t["children"]):
            walk(c, weight * space.probs[i][a])

    one = Fraction(1) if isinstance(mean, Fraction) or any(
        isinstance(q, Fraction) for pr in space.probs for q in pr) else 1.0
    walk(space.tree, one)
    return OSSSResult(var, reveal, infl)


def greedy_tree(table: np.ndarray, rng: np.random.Generator | None = None, fixed=None) -> dict:
    """A decision tree for ``table``: stop when the subcube is constant, else
    query a (random, when ``rng`` is given) free coordinate the subcube
    depends on."""
    table = np.asarray(table)
    d = table.ndim
    fixed = [None] * d if fixed is None else fixed
    cube = table[tuple(slice(None) if v is None else v for v in fixed)]
    if np.all(cube == cube.flat[0]):
        return leaf(int(cube.flat[0]))
    free = [i for i in range(d) if fixed[i] is None]
    axes = {i: k for k, i in enumerate(free)}
    live = [i for i in free if not np.all(cube == np.take(cube, [0], axis=axes[i]))]
    i = int(rng.choice(live)) if rng is not None else live[0]
    kids = []
    for a in range(table.shape[i]):
        f = list(fixed)
        f[i] = a
        kids.append(greedy_tree(table, rng, f))
    return node(i, kids)


def random_instance(rng: np.random.Generator, max_coords: int = 4, max_alphabet: int = 3) -> FiniteProductSpace:
    """Random rational probabilities, random truth table, random greedy tree."""
    n = int(rng.integers(1, max_coords + 1))
    alph = [int(rng.integers(2, max_alphabet + 1)) for _ in range(n)]
    probs = []
    for a in alph:
        wts = rng.integers(1, 10, size=a)
        probs.append([Fraction(int(x), int(wts.sum())) for x in wts])
    bias = rng.random()
    table = (rng.random(alph) < bias).astype(np.int64)
    return FiniteProductSpace(probs, table, greedy_tree(table, rng))


def and2() -> FiniteProductSpace:
    h = Fraction(1, 2)
    return FiniteProductSpace([[h, h], [h, h]], np.array([[0, 0], [0, 1]]),
                              node(0, [leaf(0), node(1, [leaf(0), leaf(1)])]))


def dictator(n_coords: int = 2) -> FiniteProductSpace:
    h = Fraction(1, 2)
    table = np.zeros((2,) * n_coords, np.int64)
    table[1] = 1
    return FiniteProductSpace([[h, h]] * n_coords, table, node(0, [leaf(0), leaf(1)]))


# -- Voronoi -------------------------------------------------------------------

@dataclass
class VoronoiOSSSReport:
    theta: float
    theta_stderr: float
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    tail: float
    trials_reveal: int
    trials_influence: int
    seeds: dict

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + 3 * math.hypot(self.lhs_stderr, self.rhs_stderr)


def osss_check_voronoi(p: float, n: float, k: float, eps: float, trials: int, root_seed: int, d: int = 2,
                       influence_trials: int | None = None, threads: int = 1) -> VoronoiOSSSReport:
    """``theta_n (1 - theta_n) <= sum_x delta_x(T_k) Inf_x`` on two independent trial sets.

    Revealments and the decision come from trial set A (seed ``root_seed``),
    influences over boxes with corner in ``[-4n, 4n)^d`` from trial set B
    (seed ``root_seed + 1``). Boxes outside the revealment window are never
    revealed. The right side is a product of independent means, so its
    variance is the sum of the two one-sample variances of the linear terms.
    """
    if d != 2:
        raise ParameterError("the Voronoi check is implemented for d = 2")
    trials_b = influence_trials or trials
    spec = origin_to_sphere(n)
    prof = influence_profile(p, spec, eps, trials_b, root_seed + 1, d)
    rows = _reveal_rows(p, k, n, eps, trials, root_seed, threads)
    grid_boxes, reveal_lists, decisions = rows
    # map revealment boxes onto influence boxes
    lookup = {tuple(b): i for i, b in enumerate(prof.boxes.tolist())}
    to_prof = np.array([lookup.get(tuple(b), -1) for b in grid_boxes.tolist()])
    inf_mean = prof.mean
    a_sums = []
    delta = np.zeros(len(prof.boxes))
    for rev in reveal_lists:
        j = to_prof[rev]
        j = j[j >= 0]
        delta[j] += 1
        a_sums.append(inf_mean[j].sum())
    delta /= trials
    b_sums = prof.per_trial_sums(delta)
    rhs = float(delta @ inf_mean)
    rhs_se = math.sqrt(np.var(a_sums, ddof=1) / trials + np.var(b_sums, ddof=1) / trials_b)
    dec = np.asarray(decisions, float)
    th = float(dec.mean())
    th_se = float(dec.std(ddof=1) / math.sqrt(trials))
    lhs = th * (1 - th) * trials / (trials - 1)
    lhs_se = abs(1 - 2 * th) * th_se
    tail = float((delta * inf_mean)[prof.shell()].sum())
    return VoronoiOSSSReport(th, th_se, lhs, lhs_se, rhs, rhs_se, tail, trials, trials_b,
                             {"reveal": root_seed, "influence": root_seed + 1})


def _reveal_rows(p, k, n, eps, trials, root_seed, threads):
    window = Window.for_radius(2, n + 1.0, eps)
    rows = map_trials(partial(_reveal_trial, p, k, n, window, eps), trials, root_seed, threads)
    grid = box_partition(window, eps)
    return grid.indices(), [r for r, _ in rows], [v for _, v in rows]


def _reveal_trial(p, k, n, window, eps, seed):
    tr = run_Tk(sample_configuration(window, p, seed, eps), k, n)
    return tr.revealed, tr.decision
