from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import make_config
from vorperc.connectivity import evaluate, origin_to_sphere
from vorperc.errors import ParameterError, WindowTooSmallError
from vorperc.exploration import Explorer, connection_to_spheres, discover, revealment_profile, run_Tk
from vorperc.geometry import color_at
from vorperc.point_process import Window, derive_seed, sample_configuration


def lattice_config(black, spacing=0.5, L=5.0, pad=1.0, eps=0.5):
    g = np.arange(-L - pad + spacing / 2, L + pad, spacing)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    return make_config(pts, [black] * len(pts), L=L, pad=pad, eps=eps)


class TestDiscover:
    def test_single_point_in_box(self):
        c = make_config([[0.5, 0.5]], [True], L=3.0, pad=1.0, eps=1.0)
        d = discover(c, (0, 0))
        # every point of the box is within sqrt(2)/2 of the point; boxes farther
        # than that from the whole box need not be revealed
        assert 1 <= d.rounds <= math.ceil(math.sqrt(2) + 1)
        assert c.grid.flat((0, 0)) in d.revealed
        assert np.all(d.color_at([[0.1, 0.9], [0.99, 0.01]]))

    def test_dense_configuration_needs_two_rounds(self):
        c = lattice_config(True)
        d = discover(c, (0, 0))
        boxes = c.grid.unflat(d.revealed)
        assert d.rounds <= 2
        assert np.all(np.linalg.norm(boxes.astype(float), axis=1) * c.grid.eps <= 2 + 1e-9)

    def test_colour_matches_color_at(self):
        c = sample_configuration(Window.for_radius(2, 4.0, 0.5), 0.5, 71, 0.5)
        ex = Explorer(c)
        rng = np.random.default_rng(2)
        for box in [(0, 0), (-3, 2), (5, -6)]:
            d = ex.discover(box)
            ys = (np.asarray(box) + rng.random((300, 2))) * 0.5
            assert np.array_equal(d.color_at(ys), [color_at(c, y) for y in ys])

    def test_cached(self):
        c = lattice_config(False)
        ex = Explorer(c)
        assert ex.discover((1, 1)) is ex.discover((1, 1))

    def test_empty_window(self):
        c = make_config(np.zeros((0, 2)), [], L=2.0, pad=1.0)
        with pytest.raises(WindowTooSmallError):
            discover(c, (0, 0))

    def test_outside_grid(self, small_config):
        with pytest.raises(ParameterError):
            discover(small_config, (50, 0))

    def test_pitch_must_divide_box(self, small_config):
        with pytest.raises(ParameterError):
            Explorer(small_config, h=0.3)


class TestRunTk:
    def test_all_white(self):
        c = lattice_config(False)
        tr = run_Tk(c, 2.0, 4.0)
        assert not tr.decision
        assert max(tr.z_sizes) == 0
        # only the starting layer around the sphere of radius 2 is visited
        lo = np.array(tr.visits) * c.grid.eps
        hi = lo + c.grid.eps
        near = np.linalg.norm(np.maximum(np.maximum(lo, -hi), 0), axis=1)
        far = np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)), axis=1)
        band = 0.1 * math.sqrt(2) + 1e-9
        assert np.all(near <= 2.0 + band) and np.all(far >= 2.0 - band)

    def test_all_black(self):
        c = lattice_config(True)
        tr = run_Tk(c, 2.0, 4.0)
        assert tr.decision
        assert tr.z_sizes[-1] > 0

    def test_matches_evaluate(self):
        n, k, eps = 6.0, 3.0, 0.5
        window = Window.for_radius(2, n + 1.0, eps)
        for p in (0.3, 0.5, 0.7):
            for t in range(8):
                c = sample_configuration(window, p, derive_seed(72, t), eps)
                assert run_Tk(c, k, n).decision == evaluate(c, origin_to_sphere(n))

    def test_trace_json(self, tmp_path):
        c = sample_configuration(Window.for_radius(2, 5.0, 0.5), 0.5, 73, 0.5)
        tr = run_Tk(c, 2.0, 4.0, snapshots=True)
        doc = json.loads(tr.to_json(tmp_path / "trace.json"))
        assert doc["steps"] == tr.steps == len(tr.snapshots)
        assert json.loads((tmp_path / "trace.json").read_text()) == doc

    def test_bad_k(self, small_config):
        with pytest.raises(ParameterError):
            run_Tk(small_config, 5.0, 3.0)


class TestRevealment:
    def test_profile_shape(self):
        prof = revealment_profile(0.5, 2.0, 4.0, 0.5, 30, 5)
        corner = np.linalg.norm(prof.boxes * 0.5 + 0.25, axis=1)
        on_sphere = np.abs(corner - 2.0) < 0.1
        assert np.all(prof.delta[on_sphere] == 1.0)
        assert prof.delta[corner > 9.0].max() == 0.0
        ratio, box = prof.max_ratio(min_count=3)
        assert ratio > 0 and box is not None

    def test_connection_contains_sphere_band(self):
        c = lattice_config(True)
        con = connection_to_spheres(c, [2.0])
        assert con.all()

    def test_csv(self, tmp_path):
        prof = revealment_profile(0.5, 2.0, 3.0, 0.5, 5, 6)
        prof.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "x1,x2,revealment,connection" and len(lines) == len(prof.boxes) + 1

    def test_dimension(self):
        with pytest.raises(ParameterError):
            revealment_profile(0.5, 1.0, 2.0, 0.5, 2, 1, d=3)
