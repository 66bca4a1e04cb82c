"""Simulation and checks for Voronoi percolation in a padded window.

Modules, bottom up: ``point_process`` (Poisson samples on a box grid),
``geometry`` (nearest-point raster, Delaunay adjacency), ``connectivity``
(connection events), ``estimators`` (Monte Carlo estimates and diagnostics),
``tensor`` (per-box influences), ``exploration`` (the box-by-box algorithm
and its revealments), ``osss`` (variance bound for decision trees),
``sharpness`` (differential inequality and sequence dichotomy) and ``cli``.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .connectivity import EventSpec, box_crossing, evaluate, origin_to_sphere
from .errors import (FitError, ParameterError, RefineStepError, ResourceError, StateError, ValidationError,
                     WindowTooSmallError)
from .point_process import PointConfiguration, Window, resample_box, sample_configuration

__all__ = [
    "EventSpec", "box_crossing", "evaluate", "origin_to_sphere",
    "FitError", "ParameterError", "RefineStepError", "ResourceError", "StateError", "ValidationError",
    "WindowTooSmallError", "PointConfiguration", "Window", "resample_box", "sample_configuration",
]
