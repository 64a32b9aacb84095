"""Time grids for hazard integration and trapezoidal quadrature.

Two grid builders are provided.  The per-sample scheme spaces points
equally between 0 and the sample's own observed time, so the observed
time is always the last grid point.  The shared scheme spaces points
equally between 0 and a common maximum and then inserts the sample's
observed time, so all samples share the same backbone and differ only at
the inserted point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, ShapeError

# observed times at or below this (in scaled units) are clamped up so the
# integral from 0 to the anchor never degenerates to zero length
MIN_EVENT_TIME = 1e-6

# relative tolerance for treating an inserted point as already on the grid
MERGE_RTOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Ordered integration points with the sample's observed time anchored.

    ``points[0]`` is 0, points ascend strictly, and ``points[anchor]``
    equals the observed time the grid was built for.
    """

    points: np.ndarray
    anchor: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 2:
            raise InputError(f"grid needs at least two points, got shape {pts.shape}")
        if pts[0] != 0.0:
            raise InputError(f"grid must start at 0, got {pts[0]!r}")
        if np.any(np.diff(pts) <= 0.0):
            raise InputError("grid points must ascend strictly")
        if not 0 <= self.anchor < pts.size:
            raise InputError(f"anchor {self.anchor} outside grid of {pts.size} points")

    @property
    def spacings(self) -> np.ndarray:
        """Differences between consecutive points (length ``len(points) - 1``)."""
        return np.diff(self.points)

    def __len__(self) -> int:
        return self.points.size


def _clamp_event_time(event_time: float) -> float:
    if not np.isfinite(event_time):
        raise InputError(f"event time must be finite, got {event_time!r}")
    if event_time < 0:
        raise InputError(f"event time must be nonnegative, got {event_time!r}")
    return max(float(event_time), MIN_EVENT_TIME)


def per_sample_grid(event_time: float, m: int) -> TimeGrid:
    """m equally spaced points from 0 to the observed time, anchored at the end.

    Built with ``linspace`` so the endpoints are assigned exactly rather
    than accumulated; times at or below resolution are clamped up to
    ``MIN_EVENT_TIME``.
    """
    if m < 2:
        raise InputError(f"need at least 2 grid points, got m={m}")
    event_time = _clamp_event_time(event_time)
    return TimeGrid(np.linspace(0.0, event_time, m), anchor=m - 1)


def global_grid(event_time: float, t_max: float, m: int) -> TimeGrid:
    """m equally spaced points on [0, t_max] with the observed time inserted.

    If the observed time falls within ``MERGE_RTOL * t_max`` of a backbone
    point, that point is snapped to the exact observed time instead of
    inserting a near-duplicate (never the 0 endpoint).  Observed times
    beyond ``t_max`` extend the grid past the backbone, so the integral up
    to the anchor is never truncated.
    """
    if m < 2:
        raise InputError(f"need at least 2 grid points, got m={m}")
    if t_max <= 0 or not np.isfinite(t_max):
        raise InputError(f"t_max must be positive and finite, got {t_max!r}")
    event_time = _clamp_event_time(event_time)
    base = np.linspace(0.0, t_max, m)
    if event_time > t_max:
        return TimeGrid(np.append(base, event_time), anchor=m)

    tol = MERGE_RTOL * t_max
    nearest = int(np.argmin(np.abs(base - event_time)))
    if nearest >= 1 and abs(base[nearest] - event_time) <= tol:
        pts = base.copy()
        pts[nearest] = event_time  # snap so the anchor value is exact
        return TimeGrid(pts, anchor=nearest)
    idx = int(np.searchsorted(base, event_time))
    return TimeGrid(np.insert(base, idx, event_time), anchor=idx)


def trapezoid(values, grid: TimeGrid, upto: int | None = None) -> float:
    """Trapezoidal integral of sampled values over the grid prefix ending at ``upto``.

    ``upto`` defaults to the last grid point; pass ``grid.anchor`` to
    integrate up to the observed time.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != grid.points.shape:
        raise ShapeError(
            f"values shape {values.shape} does not match grid of {len(grid)} points"
        )
    stop = len(grid) - 1 if upto is None else int(upto)
    if not 0 <= stop < len(grid):
        raise InputError(f"upto={stop} outside grid of {len(grid)} points")
    deltas = np.diff(grid.points[: stop + 1])
    return float(np.sum((values[1 : stop + 1] + values[:stop]) * 0.5 * deltas))


def trapezoid_weights(grid: TimeGrid, upto: int | None = None) -> np.ndarray:
    """Per-point weights w with ``w @ values == trapezoid(values, grid, upto)``."""
    stop = len(grid) - 1 if upto is None else int(upto)
    if not 0 <= stop < len(grid):
        raise InputError(f"upto={stop} outside grid of {len(grid)} points")
    w = np.zeros(len(grid))
    deltas = np.diff(grid.points[: stop + 1])
    w[:stop] += 0.5 * deltas
    w[1 : stop + 1] += 0.5 * deltas
    return w


def cumulative_trapezoid(values, points) -> np.ndarray:
    """Running trapezoidal integral along ``points``; first entry is 0."""
    values = np.asarray(values, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if values.shape != points.shape:
        raise ShapeError(f"values shape {values.shape} does not match points {points.shape}")
    out = np.zeros_like(values)
    if values.size > 1:
        steps = (values[1:] + values[:-1]) * 0.5 * np.diff(points)
        out[1:] = np.cumsum(steps)
    return out
