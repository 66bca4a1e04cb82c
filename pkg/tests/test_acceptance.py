"""Acceptance criteria, one test each, at the documented sizes and tolerances.

Each test records a one-line verdict; the lines are printed in the pytest
terminal summary, and by ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES  # noqa: E402

from vorperc.cli import main  # noqa: E402
from vorperc.connectivity import box_crossing, evaluate, origin_to_sphere  # noqa: E402
from vorperc.estimators import ThetaTable, estimate_event, estimate_pc, fit_decay, russo_check  # noqa: E402
from vorperc.exploration import revealment_profiles, run_Tk  # noqa: E402
from vorperc.osss import and2, exact_osss, osss_check_voronoi, random_instance  # noqa: E402
from vorperc.point_process import Window, derive_seed, sample_configuration  # noqa: E402
from vorperc.sharpness import (beta1_estimate, integrate_lemma_system, mlem_check,  # noqa: E402
                               verify_lemma_dichotomy)

THETA_TRIALS = 3000
THETA_N_MAX = 24


def record(num: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {num:>2}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


@pytest.fixture(scope="module")
def theta_table():
    t0 = time.time()
    table = ThetaTable.sample(2, THETA_N_MAX, THETA_TRIALS, 3003)
    print(f"theta table: {THETA_TRIALS} trials, n <= {THETA_N_MAX}, {time.time() - t0:.0f} s")
    return table


def test_01_crossing_duality():
    parts, ok = [], True
    for i, n in enumerate((4, 8, 16)):
        e = estimate_event(0.5, box_crossing(n), 4000, 1001 + i)
        z = (e.mean - 0.5) / e.stderr
        ok &= abs(z) <= 3
        parts.append(f"n={n} {e.mean:.4f}+-{e.stderr:.4f} (z={z:+.2f})")
    record(1, "crossing probability at p=1/2 within 3 se of 1/2", ok, "; ".join(parts))
    assert ok


def test_02_critical_point():
    res = estimate_pc(2, "raster", trials=2000, root_seed=2002, sizes=(8, 16))
    lo, hi = res.interval
    ok = hi - lo <= 0.02 and lo <= 0.5 <= hi
    record(2, "critical point interval", ok,
           f"[{lo:.4f}, {hi:.4f}] width {hi - lo:.4f}, root {res.root:.4f}+-{res.root_stderr:.4f}")
    assert ok


def test_03_subcritical_decay(theta_table):
    ns = list(range(4, 25))
    sub = fit_decay([theta_table.theta(0.35, n) for n in ns], ns)
    crit = fit_decay([theta_table.theta(0.5, n) for n in ns], ns)
    ok = sub.rate < 0 and abs(sub.rate) > 3 * sub.rate_stderr and 5 * abs(crit.rate) <= abs(sub.rate)
    record(3, "decay rate negative at p=0.35 and 5x smaller at p=1/2", ok,
           f"rate(0.35) {sub.rate:.4f}+-{sub.rate_stderr:.4f}, rate(0.5) {crit.rate:.4f}+-{crit.rate_stderr:.4f},"
           f" ratio {abs(sub.rate) / max(abs(crit.rate), 1e-300):.1f}")
    assert ok


def test_04_russo_identity():
    parts, ok = [], True
    for i, p in enumerate((0.4, 0.5, 0.6)):
        rep = russo_check(p, origin_to_sphere(4), 2000, 4004 + i)
        ok &= rep.passed
        parts.append(f"p={p} deriv {rep.derivative.mean:.3f} piv {rep.pivotal.mean:.3f} "
                     f"diff {rep.difference.mean:+.3f}+-{rep.difference.stderr:.3f}")
    record(4, "finite-difference derivative equals expected pivotal count", ok, "; ".join(parts))
    assert ok


def test_05_exact_variance_bound():
    rng = np.random.default_rng(5005)
    slacks = [exact_osss(random_instance(rng, 4, 3)).slack for _ in range(1000)]
    r = exact_osss(and2())
    exact_ok = r.variance == Fraction(3, 16) and r.rhs == Fraction(3, 8)
    ok = min(slacks) >= 0 and exact_ok
    record(5, "exact variance bound on 1000 random instances and AND of 2 bits", ok,
           f"min slack {min(slacks)}, negatives {sum(s < 0 for s in slacks)}; AND2 Var {r.variance}, RHS {r.rhs}")
    assert ok


def test_06_voronoi_variance_bound():
    rep = osss_check_voronoi(0.5, 8.0, 4.0, 0.5, 200, 6006)
    bound = rep.rhs + 3 * math.hypot(rep.lhs_stderr, rep.rhs_stderr)
    record(6, "Voronoi variance bound at n=8, k=4, eps=0.5", rep.passed,
           f"theta {rep.theta:.3f}, lhs {rep.lhs:.4f}+-{rep.lhs_stderr:.4f}, rhs {rep.rhs:.4f}+-{rep.rhs_stderr:.4f}"
           f" (lhs <= {bound:.4f})")
    assert rep.passed


def test_07_exploration_decides_correctly():
    n, k, eps = 6.0, 3.0, 0.5
    window = Window.for_radius(2, n + 1.0, eps)
    spec = origin_to_sphere(n)
    fails, counts = 0, []
    for i, p in enumerate((0.3, 0.5, 0.7)):
        m = 334 if i == 0 else 333
        yes = 0
        for t in range(m):
            c = sample_configuration(window, p, derive_seed(7007 + i, t), eps)
            direct = evaluate(c, spec)
            fails += run_Tk(c, k, n).decision != direct
            yes += direct
        counts.append(f"p={p}: {m} configs, {yes} connected")
    ok = fails == 0
    record(7, "exploration decision equals direct evaluation on 1000 configurations", ok,
           f"{fails} mismatches ({'; '.join(counts)})")
    assert ok


def test_08_revealment_ratio_shape():
    profs = revealment_profiles(0.5, [2.0, 4.0, 6.0], 8.0, 0.5, 400, 8008)
    ratios = {k: prof.max_ratio(min_count=10)[0] for k, prof in profs.items()}
    spread = max(ratios.values()) / min(ratios.values())
    ok = spread < 2
    record(8, "max revealment / connection ratio varies < 2x across k", ok,
           ", ".join(f"k={k:g}: {r:.3f}" for k, r in ratios.items()) + f"; spread {spread:.3f}")
    assert ok


def test_09_differential_inequality(theta_table):
    ps = [round(0.3 + 0.05 * i, 10) for i in range(9)]
    rep = mlem_check(theta_table, ps, range(1, 17), 0.04)
    record(9, "differential inequality constant positive at 3 se", rep.passed,
           f"c_hat {rep.c_hat:.4f}+-{rep.c_stderr:.4f} at (p, n)={rep.argmin}, {len(rep.excluded)} points excluded")
    assert rep.passed


def test_10_sequence_dichotomy():
    parts, ok = [], True
    for amp, rate in ((0.5, 0.05), (0.3, 0.08), (0.4, 0.1)):
        fam = integrate_lemma_system(1.0, 0.0, 2.0, 64, amp * np.exp(-rate * np.arange(65)))
        b1 = beta1_estimate(fam, 0.02)
        rep = verify_lemma_dichotomy(fam, b1.beta1, 0.05, 0.02)
        ok &= rep.passed and b1.reached
        worst_above = min((f - need for _, f, need in rep.above), default=math.inf)
        parts.append(f"f_n(0)={amp}e^-{rate}n: beta1 {b1.beta1:.3f}, max rate below {max(r for _, r in rep.below):.4f},"
                     f" min f_N excess above {worst_above:.4f}")
    f0, f1 = 0.8, 0.1
    single = integrate_lemma_system(10.0, 0.0, 1.0, 1, [f0, f1], step=1e-4, grid_step=0.01)
    err = float(np.max(np.abs(single.values[1] - f1 * np.exp(single.grid / f0))))
    ok &= err < 1e-6
    parts.append(f"single equation max error {err:.2e}")
    record(10, "capped sequence families show the dichotomy; single equation matches closed form", ok,
           "; ".join(parts))
    assert ok


DETERMINISM_RUNS = [
    ["sample", "--n", 4, "--p", 0.4, "--seed", 1],
    ["theta", "--d", 2, "--p", 0.5, "--n", 8, "--trials", 1000, "--seed", 7],
    ["crossing", "--n", 4, 8, "--p", 0.45, 0.55, "--trials", 200],
    ["influence", "--n", 3, "--eps", 0.5, "--trials", 30],
    ["explore", "--n", 4, "--k", 2, 3, "--trials", 20],
    ["osss-exact", "--instance", "and2"],
    ["osss-exact", "--random", 200, "--seed", 3],
    ["osss-voronoi", "--n", 4, "--k", 2, "--trials", 20],
    ["pc", "--trials", 200, "--sizes", 4, 8],
    ["decay", "--n-min", 2, "--n-max", 8, "--trials", 200],
    ["mlem", "--n-max", 6, "--trials", 200],
    ["lemma", "--N", 32],
]


def _tree(path: Path) -> dict:
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_11_determinism(tmp_path, capsys):
    diffs = []
    for argv in DETERMINISM_RUNS:
        dirs = []
        for rep in ("a", "b"):
            code = main([str(a) for a in argv] + ["--out", str(tmp_path / rep)])
            out = capsys.readouterr().out
            assert code in (0, 4), argv
            dirs.append(Path(out.splitlines()[0]))
        if _tree(dirs[0]) != _tree(dirs[1]) or dirs[0].name != dirs[1].name:
            diffs.append(argv[0])
    for rep in ("a", "b"):
        assert main(["plots"] + [str(p) for p in sorted((tmp_path / rep).iterdir())]) == 0
    capsys.readouterr()
    if _tree(tmp_path / "a") != _tree(tmp_path / "b"):
        diffs.append("plots")
    ok = not diffs
    record(11, "every subcommand re-run gives byte-identical outputs", ok,
           f"{len(DETERMINISM_RUNS)} runs plus plots compared" + (f", differing: {diffs}" if diffs else ""))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
