"""Lap evaluation: discrete cumulative curvature, distance, speed and timing stats."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["LapMetrics", "cumulative_curvature", "lap_metrics"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LapMetrics:
    cumulative_curvature: float
    distance: float
    mean_speed: float
    max_speed: float
    min_speed: float
    mean_solve_time: float   # milliseconds
    max_solve_time: float
    min_solve_time: float

    def as_dict(self) -> dict:
        return {
            "cumulative_curvature": self.cumulative_curvature,
            "distance_m": self.distance,
            "mean_speed_mps": self.mean_speed,
            "max_speed_mps": self.max_speed,
            "min_speed_mps": self.min_speed,
            "mean_solve_time_ms": self.mean_solve_time,
            "max_solve_time_ms": self.max_solve_time,
            "min_solve_time_ms": self.min_solve_time,
        }


def cumulative_curvature(positions) -> float:
    """Sum of three-point (inverse circumradius) curvatures along a polyline.

    kappa_i = 2 |cross(p1 - p0, p2 - p1)| / (|p1 - p0| |p2 - p1| |p2 - p0|)
    over every interior sample; repeated points are skipped with a warning.
    """
    pts = np.asarray(positions, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 planar points")

    keep = [0]
    for i in range(1, pts.shape[0]):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-12:
            keep.append(i)
    if len(keep) != pts.shape[0]:
        logger.warning("cumulative_curvature: skipped %d repeated points",
                       pts.shape[0] - len(keep))
    pts = pts[keep]
    if pts.shape[0] < 3:
        return 0.0

    e1 = pts[1:-1] - pts[:-2]
    e2 = pts[2:] - pts[1:-1]
    chord = pts[2:] - pts[:-2]
    cross = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    denom = (np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
             * np.linalg.norm(chord, axis=1))
    mask = denom > 1e-18
    return float(np.sum(2.0 * cross[mask] / denom[mask]))


def lap_metrics(result) -> LapMetrics:
    """Aggregate a finished lap: trace length, planar speed stats, solve times."""
    pos = np.array([[s.x, s.y] for s in result.states])
    distance = float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))
    curv = cumulative_curvature(pos) if pos.shape[0] >= 3 else 0.0

    speeds = [math.hypot(s.vx, s.vy) for s in result.states]
    times_ms = [st.wall_time * 1e3 for st in result.per_step_stats]
    if not times_ms:
        times_ms = [0.0]
    return LapMetrics(
        cumulative_curvature=curv,
        distance=distance,
        mean_speed=float(np.mean(speeds)),
        max_speed=float(np.max(speeds)),
        min_speed=float(np.min(speeds)),
        mean_solve_time=float(np.mean(times_ms)),
        max_solve_time=float(np.max(times_ms)),
        min_solve_time=float(np.min(times_ms)),
    )
