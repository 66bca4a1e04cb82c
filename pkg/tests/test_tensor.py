from __future__ import annotations

import math

import numpy as np
import pytest

from vorperc.connectivity import evaluate, origin_to_sphere
from vorperc.errors import ParameterError
from vorperc.point_process import Window, derive_seed, resample_box, resample_seed, sample_configuration
from vorperc.tensor import (BoxHasBlack, box_has_black_closed_form, box_has_black_enumerated, estimate_influence,
                            influence_profile, influence_sum_vs_derivative, paired_flips, profile_boxes,
                            symmetry_orbit)


class TestPairedFlips:
    @pytest.mark.parametrize("p", [0.4, 0.6])
    def test_matches_full_resampling(self, p):
        spec = origin_to_sphere(2)
        eps = 0.5
        window = Window.for_radius(2, 4.0, eps)
        boxes = profile_boxes(eps, 4.0, 2)
        for t in range(3):
            seed = derive_seed(61, t)
            c = sample_configuration(window, p, seed, eps)
            fast = set(paired_flips(c, spec, boxes, seed).tolist())
            base = evaluate(c, spec)
            slow = set()
            for i, b in enumerate(boxes):
                f = int(c.grid.flat(b))
                if evaluate(resample_box(c, b, resample_seed(seed, f, 0)), spec) != base:
                    slow.add(i)
            assert fast == slow

    def test_needs_raster(self, small_config):
        with pytest.raises(ParameterError):
            paired_flips(small_config, origin_to_sphere(2, engine="delaunay2d"), np.zeros((1, 2), int), 0)


class TestInfluence:
    def test_far_box_saturated(self):
        window = Window.for_radius(2, 12.0)
        for p in (0.0, 1.0):
            e = estimate_influence(p, origin_to_sphere(2), 1.0, (10, 10), 20, 1, window=window)
            assert e.mean == 0.0

    def test_origin_box_positive(self):
        prof = influence_profile(0.5, origin_to_sphere(6), 1.0, 150, 7)
        e = prof.estimate((0, 0))
        assert e.mean > 3 * e.stderr

    def test_decay_with_distance(self):
        n = 3.0
        prof = influence_profile(0.5, origin_to_sphere(n), 1.0, 120, 8, radius=5 * n)
        corner = np.linalg.norm(prof.boxes + 0.5, axis=1)
        inner = prof.mean[corner <= n].mean()
        outer = prof.mean[corner >= 4 * n].mean()
        assert outer < inner
        assert outer == 0.0

    def test_profile_agrees_with_direct(self):
        # the paired profile uses the same seeds as the full re-evaluation
        spec = origin_to_sphere(2)
        prof = influence_profile(0.5, spec, 1.0, 40, 9, radius=3.0)
        window = Window.for_radius(2, max(spec.extent, 3.0), 1.0)
        for box in [(0, 0), (-2, 1)]:
            e = estimate_influence(0.5, spec, 1.0, box, 40, 9, window=window)
            assert e.mean == prof.estimate(box).mean

    def test_saturated_lower_bound(self):
        rep = influence_sum_vs_derivative(1.0, origin_to_sphere(3), 1.0, 20, 1)
        assert rep.derivative.mean == 0.0 and rep.influence_sum.mean == 0.0

    def test_lower_bound_small(self):
        rep = influence_sum_vs_derivative(0.5, origin_to_sphere(4), 1.0, 120, 2)
        assert rep.passed

    def test_symmetry_orbit(self):
        assert len(symmetry_orbit((1, 3), 2)) == 8
        assert symmetry_orbit((0, 0), 2) == [(-1, -1), (-1, 0), (0, -1), (0, 0)]
        assert len(symmetry_orbit((2, 2, 2), 3)) == 8

    def test_profile_boxes(self):
        b = profile_boxes(0.5, 1.0, 2)
        assert len(b) == 16 and b.min() == -2 and b.max() == 1


class TestBoxHasBlack:
    @pytest.mark.parametrize("p,eps", [(0.3, 1.0), (0.5, 0.5), (0.8, 0.25)])
    def test_closed_form_vs_enumeration(self, p, eps):
        inf_c, der_c = box_has_black_closed_form(p, eps, 2)
        inf_e, der_e = box_has_black_enumerated(p, eps, 2, max_points=4)
        lam = eps ** 2
        # truncation error of the Poisson tail beyond 4 points
        tail = 1 - sum(math.exp(-lam) * lam ** k / math.factorial(k) for k in range(5))
        assert abs(inf_c - inf_e) <= 4 * tail + 1e-15
        assert abs(der_c - der_e) <= 5 * tail * max(1, lam) + 1e-15

    def test_enumeration_converges(self):
        inf_c, der_c = box_has_black_closed_form(0.5, 1.0, 2)
        inf_e, der_e = box_has_black_enumerated(0.5, 1.0, 2, max_points=30)
        assert abs(inf_c - inf_e) < 1e-12 and abs(der_c - der_e) < 1e-12

    def test_monte_carlo(self):
        p, eps = 0.5, 1.0
        event = BoxHasBlack((0, 0), eps)
        e = estimate_influence(p, event, eps, (0, 0), 2000, 3, window=Window(2, 1.0, 1.0))
        inf, _ = box_has_black_closed_form(p, eps, 2)
        assert abs(e.mean - inf) < 4 * e.stderr

    def test_callable_needs_window(self):
        with pytest.raises(ParameterError):
            estimate_influence(0.5, BoxHasBlack((0, 0), 1.0), 1.0, (0, 0), 5, 1)
