"""Command line entry point: ``vorperc <command> [flags]``.

Every command writes its CSV/JSON outputs and a manifest into
``<out>/<command>-<digest>/``. Exit codes: 0 success, 2 bad parameters,
3 resource or step-control failure, 4 a ``--check`` that did not pass.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .connectivity import box_crossing, origin_to_sphere
from .errors import FitError, ParameterError, RefineStepError, ResourceError, ValidationError
from .estimators import ThetaTable, estimate_event, estimate_pc, fit_decay
from .exploration import revealment_profiles
from .harness import ExperimentManifest, csv_text, emit_plots, json_text, write_result
from .osss import FiniteProductSpace, and2, dictator, exact_osss, osss_check_voronoi, random_instance
from .point_process import Window, dump_csv, sample_configuration
from .sharpness import beta1_estimate, integrate_lemma_system, mlem_check, verify_lemma_dichotomy
from .tensor import influence_profile

# flags that never change an output byte
RUNTIME_ONLY = {"config", "threads", "out", "check", "command", "failures"}


def _grid(start, stop, step):
    k = int(round((stop - start) / step))
    return [round(start + i * step, 12) for i in range(k + 1)]


def _via_file(write) -> str:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "out"
        write(path)
        return path.read_text()


def _require(a, ok: bool, what: str) -> None:
    if not ok:
        a.failures.append(what)


# -- commands ----------------------------------------------------------------------

def cmd_sample(a):
    cfg = sample_configuration(Window.for_radius(a.d, a.n, a.eps), a.p, a.seed, a.eps)
    summary = {"points": len(cfg.points), "black": int(cfg.black.sum()), "window_half_width": cfg.window.extent}
    return {"points.csv": _via_file(lambda p: dump_csv(cfg, p)), "summary.json": json_text(summary)}, summary


def cmd_theta(a):
    table = ThetaTable.sample(a.d, a.n, a.trials, a.seed, a.h, a.threads)
    rows = []
    for p in a.p:
        for n in range(1, a.n + 1):
            e = table.theta(p, n)
            rows.append((p, n, e.mean, e.stderr, e.trials))
    last = {f"p={p}": table.theta(p, a.n).mean for p in a.p}
    return {"theta.csv": csv_text(["p", "n", "mean", "stderr", "trials"], rows)}, last


def cmd_crossing(a):
    rows, summary = [], {}
    for i, n in enumerate(a.n):
        spec = box_crossing(n, engine=a.engine, h=a.h)
        for j, p in enumerate(a.p):
            e = estimate_event(p, spec, a.trials, a.seed + 1000 * i + j, a.d, threads=a.threads)
            rows.append((p, n, e.mean, e.stderr, e.trials))
            summary[f"p={p},n={n}"] = [e.mean, e.stderr]
    if a.check:
        for p, n, m, se, _ in rows:
            if p == 0.5:
                _require(a, abs(m - 0.5) <= 3 * se, f"crossing n={n}: {m:.4f} not within 3 se ({se:.4f}) of 1/2")
    return {"crossing.csv": csv_text(["p", "n", "mean", "stderr", "trials"], rows)}, summary


def cmd_influence(a):
    spec = origin_to_sphere(a.n, h=a.h)
    prof = influence_profile(a.p, spec, a.eps, a.trials, a.seed, a.d, a.radius, threads=a.threads)
    total = prof.total()
    summary = {"sum": total.mean, "sum_stderr": total.stderr, "boxes": len(prof.boxes),
               "max": float(prof.mean.max())}
    return {"influence.csv": _via_file(prof.to_csv), "summary.json": json_text(summary)}, summary


def cmd_explore(a):
    profs = revealment_profiles(a.p, a.k, a.n, a.eps, a.trials, a.seed, a.d, a.h, threads=a.threads)
    rows, ratios = [], {}
    for k, prof in profs.items():
        for b, r, c in zip(prof.boxes.tolist(), prof.delta, prof.connection):
            rows.append((k, *b, float(r), float(c)))
        ratio, box = prof.max_ratio()
        ratios[str(k)] = {"max_ratio": ratio, "box": box}
    vals = [v["max_ratio"] for v in ratios.values()]
    spread = max(vals) / min(vals) if all(v > 0 for v in vals) else math.inf
    summary = {"max_ratio": ratios, "spread": spread}
    if a.check:
        _require(a, spread < 2, f"revealment ratio varies by {spread:.3f} across k")
    header = ["k"] + [f"x{i + 1}" for i in range(a.d)] + ["revealment", "connection"]
    return {"revealment.csv": csv_text(header, rows), "summary.json": json_text(summary)}, summary


BUILTIN_INSTANCES = {"and2": and2, "dictator": dictator}


def _instance(name):
    path = Path(name)
    if path.exists():
        return FiniteProductSpace.from_json(path.read_text())
    if path.stem in BUILTIN_INSTANCES:
        return BUILTIN_INSTANCES[path.stem]()
    raise ParameterError(f"no instance file {name}")


def _exact_doc(res):
    return {"variance": str(res.variance), "rhs": str(res.rhs), "slack": str(res.slack),
            "revealments": [str(v) for v in res.revealments], "influences": [str(v) for v in res.influences]}


def cmd_osss_exact(a):
    files = {}
    if a.instance:
        res = exact_osss(_instance(a.instance))
        doc = _exact_doc(res)
        files["result.json"] = json_text(doc)
        slacks = [res.slack]
        summary = {"variance": doc["variance"], "rhs": doc["rhs"], "slack": doc["slack"]}
    else:
        rng = np.random.default_rng(a.seed)
        rows, slacks = [], []
        for i in range(a.random):
            res = exact_osss(random_instance(rng))
            slacks.append(res.slack)
            rows.append((i, str(res.variance), str(res.rhs), str(res.slack)))
        files["instances.csv"] = csv_text(["instance", "variance", "rhs", "slack"], rows)
        summary = {"instances": a.random, "min_slack": str(min(slacks)), "negative": sum(s < 0 for s in slacks)}
        files["summary.json"] = json_text(summary)
    if a.check:
        _require(a, all(s >= 0 for s in slacks), "negative slack")
    return files, summary


def cmd_osss_voronoi(a):
    rep = osss_check_voronoi(a.p, a.n, a.k, a.eps, a.trials, a.seed, a.d, a.influence_trials, a.threads)
    doc = {"theta": rep.theta, "theta_stderr": rep.theta_stderr, "lhs": rep.lhs, "lhs_stderr": rep.lhs_stderr,
           "rhs": rep.rhs, "rhs_stderr": rep.rhs_stderr, "slack": rep.slack, "shell_share": rep.tail,
           "passed": rep.passed, "seeds": rep.seeds}
    if a.check:
        _require(a, rep.passed, f"variance {rep.lhs:.4f} exceeds bound {rep.rhs:.4f} beyond 3 se")
    return {"report.json": json_text(doc)}, {"lhs": rep.lhs, "rhs": rep.rhs, "passed": rep.passed}


def cmd_pc(a):
    res = estimate_pc(a.d, a.engine, a.trials, a.seed, a.sizes, tuple(a.bracket), a.tol, a.h, a.threads)
    doc = {"interval": list(res.interval), "root": res.root, "root_stderr": res.root_stderr,
           "sizes": list(res.sizes), "trials": res.trials, "criterion": res.criterion,
           "steps": [list(s) for s in res.steps]}
    lo, hi = res.interval
    if a.check:
        _require(a, hi - lo <= a.tol + 1e-12, f"interval width {hi - lo:.4f} exceeds {a.tol}")
        if a.d == 2:
            _require(a, lo <= 0.5 <= hi, f"interval ({lo:.4f}, {hi:.4f}) misses 1/2")
    return {"pc.json": json_text(doc)}, {"interval": [lo, hi]}


def cmd_decay(a):
    table = ThetaTable.sample(a.d, a.n_max, a.trials, a.seed, a.h, a.threads)
    ns = list(range(a.n_min, a.n_max + 1))
    rows, fits = [], {}
    for p in a.p:
        ests = [table.theta(p, n) for n in ns]
        rows += [(p, n, e.mean, e.stderr, e.trials) for n, e in zip(ns, ests)]
        try:
            f = fit_decay(ests, ns)
            fits[repr(p)] = {"rate": f.rate, "rate_stderr": f.rate_stderr, "intercept": f.intercept,
                             "n_min": f.n_min, "n_max": f.n_max, "residual": f.residual}
        except FitError as e:
            fits[repr(p)] = {"error": str(e)}
    if a.check:
        first = fits[repr(a.p[0])]
        _require(a, "rate" in first and first["rate"] < 0 and abs(first["rate"]) > 3 * first["rate_stderr"],
                 f"no significant decay at p={a.p[0]}")
        if len(a.p) > 1:
            last = fits[repr(a.p[-1])]
            _require(a, "rate" in last and 5 * abs(last["rate"]) <= abs(first["rate"]),
                     f"rate at p={a.p[-1]} is not 5x smaller than at p={a.p[0]}")
    return ({"theta.csv": csv_text(["p", "n", "mean", "stderr", "trials"], rows), "fit.json": json_text(fits)},
            {p: v.get("rate") for p, v in fits.items()})


def cmd_mlem(a):
    table = ThetaTable.sample(a.d, a.n_max, a.trials, a.seed, a.h, a.threads)
    rep = mlem_check(table, _grid(*a.p_grid), range(1, a.n_max + 1), a.dp)
    doc = {"c_hat": rep.c_hat, "c_stderr": rep.c_stderr, "argmin": rep.argmin, "excluded": rep.excluded,
           "passed": rep.passed}
    if a.check:
        _require(a, rep.passed, f"c_hat {rep.c_hat:.4f} not above 3 se ({rep.c_stderr:.4f})")
    rows = [(r["p"], r["n"], r["ratio"], r["stderr"]) for r in rep.rows()]
    return ({"ratios.csv": csv_text(["p", "n", "ratio", "stderr"], rows), "summary.json": json_text(doc)},
            {"c_hat": rep.c_hat, "c_stderr": rep.c_stderr})


def cmd_lemma(a):
    amp, rate = a.boundary
    boundary = amp * np.exp(-rate * np.arange(a.N + 1))
    fam = integrate_lemma_system(a.M, a.alpha0, a.alpha1, a.N, boundary, grid_step=a.grid_step)
    b1 = beta1_estimate(fam, a.tol)
    rep = verify_lemma_dichotomy(fam, b1.beta1, a.margin, a.tol)
    doc = json.loads(rep.to_json())
    doc.update({"beta1_reached": b1.reached, "limit_proxy": f"f_{fam.N}", "self_convergence":
                fam.meta["self_convergence"]})
    if a.check:
        _require(a, rep.passed, "dichotomy not satisfied on the grid")
    return ({"family.csv": _via_file(fam.to_csv), "dichotomy.json": json_text(doc)},
            {"beta1": b1.beta1, "passed": rep.passed})


COMMANDS = {
    "sample": cmd_sample, "theta": cmd_theta, "crossing": cmd_crossing, "influence": cmd_influence,
    "explore": cmd_explore, "osss-exact": cmd_osss_exact, "osss-voronoi": cmd_osss_voronoi, "pc": cmd_pc,
    "decay": cmd_decay, "mlem": cmd_mlem, "lemma": cmd_lemma,
}


# -- parser ------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of flag values; explicit flags win")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1, help="worker processes (0 = all cores)")
    common.add_argument("--out", default="results")
    common.add_argument("--check", action="store_true", help="apply the pass criterion, exit 4 on failure")

    ap = argparse.ArgumentParser(prog="vorperc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, help_):
        s = sub.add_parser(name, parents=[common], help=help_)
        subs[name] = s
        return s

    def geometry(s, d=2):
        s.add_argument("--d", type=int, default=d)
        s.add_argument("--h", type=float, default=None, help="raster pitch")

    s = add("sample", "dump one coloured point sample")
    geometry(s)
    s.add_argument("--p", type=float, default=0.5)
    s.add_argument("--n", type=float, default=8.0, help="half-width of the event window")
    s.add_argument("--eps", type=float, default=1.0)

    s = add("theta", "origin-to-sphere probabilities for n = 1..N")
    geometry(s)
    s.add_argument("--p", type=float, nargs="+", default=[0.5])
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--trials", type=int, default=1000)

    s = add("crossing", "left-right crossing probabilities")
    geometry(s)
    s.add_argument("--p", type=float, nargs="+", default=[0.5])
    s.add_argument("--n", type=float, nargs="+", default=[8.0])
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--engine", choices=["raster", "delaunay2d"], default="raster")

    s = add("influence", "per-box resampling influences of the origin-to-sphere event")
    geometry(s)
    s.add_argument("--p", type=float, default=0.5)
    s.add_argument("--n", type=float, default=6.0)
    s.add_argument("--eps", type=float, default=1.0)
    s.add_argument("--radius", type=float, default=None, help="box block half-width (default 4n)")
    s.add_argument("--trials", type=int, default=200)

    s = add("explore", "revealment and connection frequencies of the exploration")
    geometry(s)
    s.add_argument("--p", type=float, default=0.5)
    s.add_argument("--n", type=float, default=8.0)
    s.add_argument("--k", type=float, nargs="+", default=[2.0, 4.0, 6.0])
    s.add_argument("--eps", type=float, default=0.5)
    s.add_argument("--trials", type=int, default=200)

    s = add("osss-exact", "exact variance bound on finite product spaces")
    g = s.add_mutually_exclusive_group(required=False)
    g.add_argument("--instance", help="instance JSON file, or 'and2' / 'dictator'")
    g.add_argument("--random", type=int, default=1000, help="number of random instances")

    s = add("osss-voronoi", "variance bound for the origin-to-sphere event")
    geometry(s)
    s.add_argument("--p", type=float, default=0.5)
    s.add_argument("--n", type=float, default=8.0)
    s.add_argument("--k", type=float, default=4.0)
    s.add_argument("--eps", type=float, default=0.5)
    s.add_argument("--trials", type=int, default=150)
    s.add_argument("--influence-trials", type=int, default=None)

    s = add("pc", "critical parameter interval")
    geometry(s)
    s.add_argument("--engine", choices=["raster", "delaunay2d"], default="raster")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--sizes", type=int, nargs="+", default=None)
    s.add_argument("--bracket", type=float, nargs=2, default=[0.3, 0.7])
    s.add_argument("--tol", type=float, default=0.02)

    s = add("decay", "log-linear decay fits of origin-to-sphere probabilities")
    geometry(s)
    s.add_argument("--p", type=float, nargs="+", default=[0.35, 0.5])
    s.add_argument("--n-min", type=int, default=4)
    s.add_argument("--n-max", type=int, default=24)
    s.add_argument("--trials", type=int, default=1000)

    s = add("mlem", "differential inequality constant on a probability table")
    geometry(s)
    s.add_argument("--p-grid", type=float, nargs=3, default=[0.3, 0.7, 0.05], metavar=("START", "STOP", "STEP"))
    s.add_argument("--n-max", type=int, default=16)
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--dp", type=float, default=0.04)

    s = add("lemma", "integrate a capped sequence family and test the dichotomy")
    s.add_argument("--M", type=float, default=1.0)
    s.add_argument("--alpha0", type=float, default=0.0)
    s.add_argument("--alpha1", type=float, default=2.0)
    s.add_argument("--N", type=int, default=64)
    s.add_argument("--boundary", type=float, nargs=2, default=[0.5, 0.05], metavar=("AMP", "RATE"),
                   help="f_n(alpha0) = AMP * exp(-RATE n)")
    s.add_argument("--grid-step", type=float, default=0.002)
    s.add_argument("--margin", type=float, default=0.05)
    s.add_argument("--tol", type=float, default=0.02)

    s = sub.add_parser("plots", help="write plot scripts next to result directories")
    s.add_argument("paths", nargs="*")
    subs["plots"] = s
    return ap, subs


def parse(argv):
    ap, subs = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            raise ParameterError(f"cannot read config {args.config}: {e}") from e
        s = subs[args.command]
        known = {a.dest for a in s._actions}
        bad = sorted(set(cfg) - known)
        if bad:
            raise ParameterError(f"unknown config keys: {', '.join(bad)}")
        s.set_defaults(**cfg)
        args = ap.parse_args(argv)
    return args


def _params(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in RUNTIME_ONLY}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse(argv)
        if args.command == "plots":
            for p in emit_plots(args.paths):
                print(p)
            return 0
        if args.command == "osss-exact" and args.instance:
            args.random = None
        args.failures = []
        files, summary = COMMANDS[args.command](args)
        out = write_result(args.out, ExperimentManifest(args.command, _params(args)), files)
        print(out)
        print(json.dumps(summary, sort_keys=True, default=str))
        for msg in args.failures:
            print(f"check failed: {msg}", file=sys.stderr)
        if args.failures:
            return 4
        if args.check:
            print("check passed")
        return 0
    except (ParameterError, ValidationError, FitError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ResourceError, RefineStepError, MemoryError) as e:
        print(f"resource error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
