"""Experiment manifests, content-addressed result directories and plot scripts.

A result directory is named ``<kind>-<digest>`` where ``digest`` hashes the
canonical JSON of the manifest (kind, parameters, seed scheme, version).
Everything written into it is a function of the manifest alone: no
timestamps, host names or worker counts.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .errors import ParameterError

SCHEMA = 1
SEED_SCHEME = {
    "trial": "configuration of trial t uses derive_seed(seed, t) = SeedSequence(seed, spawn_key=(t,))",
    "resample": "box x of trial t is resampled with derive_seed(trial_seed, 0x5EED, flat(x), 0)",
    "second_set": "an independent second trial set uses seed + 1",
    "sweep": "entry j of a size sweep (and entry i of a parameter sweep within it) uses seed + 1000 j + i",
}


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if hasattr(v, "item"):
        return v.item()
    return v


@dataclass
class ExperimentManifest:
    kind: str
    params: dict
    seeds: dict = field(default_factory=lambda: dict(SEED_SCHEME))
    version: str = __version__
    schema: int = SCHEMA
    outputs: list = field(default_factory=list)

    def canonical(self) -> str:
        doc = {"kind": self.kind, "params": _plain(self.params), "seeds": self.seeds, "version": self.version,
               "schema": self.schema}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def to_json(self) -> str:
        doc = _plain(asdict(self))
        doc["digest"] = self.digest()
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) or (hasattr(v, "dtype") and v.dtype.kind == "f")
                    else _plain(v) for v in r])
    return buf.getvalue()


def json_text(doc) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=1) + "\n"


def write_result(base, manifest: ExperimentManifest, files: dict) -> Path:
    """Write ``files`` (name -> text) and the manifest into the content-addressed directory."""
    out = Path(base) / f"{manifest.kind}-{manifest.digest()[:16]}"
    out.mkdir(parents=True, exist_ok=True)
    manifest.outputs = sorted(files)
    for name, text in files.items():
        _write(out / name, text)
    _write(out / "manifest.json", manifest.to_json())
    return out


def _write(path: Path, text: str) -> None:
    if path.exists() and path.read_text() == text:
        return
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# -- plot scripts -----------------------------------------------------------------

_HEADER = '''"""Plot generated from the results in this directory (needs matplotlib)."""
import csv
import json
import math
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def rows(name):
    with open(os.path.join(HERE, name)) as fh:
        return list(csv.DictReader(fh))
'''

_DECAY = '''
data = rows("theta.csv")
fits = json.load(open(os.path.join(HERE, "fit.json")))
for p in sorted({r["p"] for r in data}, key=float):
    pts = [(float(r["n"]), float(r["mean"])) for r in data if r["p"] == p and float(r["mean"]) > 0]
    line = plt.semilogy([n for n, _ in pts], [m for _, m in pts], "o", label=f"p={p}")[0]
    fit = fits.get(p)
    if fit:
        ns = [fit["n_min"], fit["n_max"]]
        plt.semilogy(ns, [math.exp(fit["intercept"] + fit["rate"] * n) for n in ns], "-", color=line.get_color())
plt.xlabel("n")
plt.ylabel("P[0 <-> S_n]")
plt.legend()
plt.tight_layout()
plt.savefig(os.path.join(HERE, "decay.png"), dpi=120)
'''

_CURVE = '''
data = rows("{csv}")
for n in sorted({{r["n"] for r in data}}, key=float):
    pts = sorted((float(r["p"]), float(r["mean"])) for r in data if r["n"] == n)
    plt.plot([p for p, _ in pts], [m for _, m in pts], "o-", label=f"n={{n}}")
plt.xlabel("p")
plt.ylabel("probability")
plt.legend()
plt.tight_layout()
plt.savefig(os.path.join(HERE, "{png}"), dpi=120)
'''

_HEAT = '''
data = rows("{csv}")
xs = sorted({{int(r["x1"]) for r in data}})
ys = sorted({{int(r["x2"]) for r in data}})
grid = [[0.0] * len(xs) for _ in ys]
for r in data:
    grid[ys.index(int(r["x2"]))][xs.index(int(r["x1"]))] = float(r["{col}"])
plt.imshow(grid, origin="lower", extent=[xs[0], xs[-1] + 1, ys[0], ys[-1] + 1], cmap="viridis")
plt.colorbar(label="{col}")
plt.xlabel("box x1")
plt.ylabel("box x2")
plt.tight_layout()
plt.savefig(os.path.join(HERE, "{png}"), dpi=120)
'''

_REVEAL = '''
data = rows("revealment.csv")
ks = sorted({r["k"] for r in data}, key=float)
fig, axes = plt.subplots(1, len(ks), figsize=(4 * len(ks), 4), squeeze=False)
for ax, k in zip(axes[0], ks):
    sub = [r for r in data if r["k"] == k]
    xs = sorted({int(r["x1"]) for r in sub})
    ys = sorted({int(r["x2"]) for r in sub})
    grid = [[0.0] * len(xs) for _ in ys]
    for r in sub:
        grid[ys.index(int(r["x2"]))][xs.index(int(r["x1"]))] = float(r["revealment"])
    im = ax.imshow(grid, origin="lower", extent=[xs[0], xs[-1] + 1, ys[0], ys[-1] + 1], cmap="magma")
    ax.set_title(f"k={k}")
    fig.colorbar(im, ax=ax)
fig.tight_layout()
fig.savefig(os.path.join(HERE, "revealment.png"), dpi=120)
'''

PLOTS = {
    "decay": [("plot_decay.py", _DECAY)],
    "theta": [("plot_theta.py", _CURVE.format(csv="theta.csv", png="theta.png"))],
    "crossing": [("plot_crossing.py", _CURVE.format(csv="crossing.csv", png="crossing.png"))],
    "influence": [("plot_influence.py", _HEAT.format(csv="influence.csv", col="mean", png="influence.png"))],
    "explore": [("plot_revealment.py", _REVEAL)],
}


def emit_plots(paths) -> list:
    """Write plot scripts next to the results in each directory of ``paths``.

    Result kinds without a plot are skipped; nothing is written unless at
    least one script applies and every path is a result directory.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ParameterError("no result directories given")
    jobs = []
    for p in paths:
        man = p / "manifest.json"
        if not man.exists():
            raise ParameterError(f"{p} is not a result directory")
        kind = json.loads(man.read_text())["kind"]
        for name, body in PLOTS.get(kind, []):
            jobs.append((p / name, _HEADER + body))
    if not jobs:
        raise ParameterError("none of the given results has a plot")
    for path, text in jobs:
        _write(path, text)
    return [str(path) for path, _ in jobs]
