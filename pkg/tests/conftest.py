from __future__ import annotations

import numpy as np
import pytest

from vorperc.point_process import PointConfiguration, Window, box_partition, sample_configuration


def make_config(points, black, L: float = 4.0, pad: float = 2.0, eps: float = 1.0, p: float = 0.5):
    """Configuration with hand-placed points (sorted by box as the sampler does)."""
    pts = np.asarray(points, float)
    if pts.size == 0:
        pts = pts.reshape(0, 2)
    window = Window(pts.shape[1], L, pad)
    grid = box_partition(window, eps)
    flat = grid.flat(grid.box_of(pts)) if len(pts) else np.zeros(0, np.int64)
    order = np.argsort(flat, kind="stable")
    black = np.asarray(black, bool)
    marks = np.where(black, 0.0, 1.0)
    return PointConfiguration(pts[order], marks[order], black[order], np.asarray(flat, np.int64)[order], p,
                              window, grid, {})


@pytest.fixture
def small_config():
    return sample_configuration(Window.for_radius(2, 4.0), 0.5, 11)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
