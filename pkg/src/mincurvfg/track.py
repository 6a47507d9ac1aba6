"""Racetrack geometry, signed distance fields, and the boundary hinge cost.

A track is an ordered centerline with left/right boundary polylines, either
closed (racing loop) or open (point-to-point run).  The SDF is built offline
on a regular grid: positive inside the drivable corridor, negative outside,
with bilinear interpolation and analytic patch gradients for queries.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fgcore import ResidualDomainError

__all__ = [
    "Track",
    "SdfGrid",
    "ObstacleCostParams",
    "TrackLoadError",
    "SdfQueryError",
    "load_track",
    "save_track_csv",
    "build_sdf",
    "query_sdf",
    "hinge_cost",
    "save_sdf",
    "load_sdf",
    "make_ring",
    "make_oval",
    "make_chicane",
    "make_straight",
    "generate_track",
]

DEFAULT_RESOLUTION = 0.005
DEFAULT_SPACING = 0.025
# Open tracks get run-off past both ends so planning near the finish line
# stays inside the field.
OPEN_TRACK_RUNOFF = 1.0


class TrackLoadError(Exception):
    """Track input is malformed or geometrically invalid."""


class SdfQueryError(ResidualDomainError):
    """Query point lies too far outside the field to extrapolate."""


@dataclass
class Track:
    """Centerline plus boundaries; all polylines are (N, 2) metric arrays."""

    centerline: np.ndarray
    left_boundary: np.ndarray
    right_boundary: np.ndarray
    closed: bool
    half_width_left: np.ndarray | None = None
    half_width_right: np.ndarray | None = None
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float)
        self.left_boundary = np.asarray(self.left_boundary, dtype=float)
        self.right_boundary = np.asarray(self.right_boundary, dtype=float)
        if self.centerline.shape[0] < 3:
            raise TrackLoadError("centerline needs at least 3 waypoints")
        self._cum = _cumulative_arclength(self.centerline, self.closed)

    @property
    def num_waypoints(self) -> int:
        return self.centerline.shape[0]

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def station_of(self, index: int) -> float:
        return float(self._cum[index])

    def point_at(self, s: float) -> np.ndarray:
        """Centerline point at arc length s (wraps when closed, clamps when open)."""
        s = self._norm_station(s)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self._cum) - 2)
        seg = self._segment(i)
        t = (s - self._cum[i]) / max(self._cum[i + 1] - self._cum[i], 1e-12)
        return seg[0] + t * (seg[1] - seg[0])

    def tangent_at(self, s: float) -> np.ndarray:
        s = self._norm_station(s)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self._cum) - 2)
        a, b = self._segment(i)
        d = b - a
        n = np.linalg.norm(d)
        return d / n if n > 0 else np.array([1.0, 0.0])

    def project(self, point) -> float:
        """Arc length of the closest centerline point (smallest station on ties)."""
        p = np.asarray(point, dtype=float)
        pts = self.centerline
        if self.closed:
            a = pts
            b = np.roll(pts, -1, axis=0)
        else:
            a = pts[:-1]
            b = pts[1:]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.maximum(denom, 1e-18), 0.0, 1.0)
        closest = a + t[:, None] * ab
        d2 = np.einsum("ij,ij->i", p - closest, p - closest)
        i = int(np.argmin(d2))
        return float(self._cum[i] + t[i] * math.sqrt(denom[i]))

    def _norm_station(self, s: float) -> float:
        if self.closed:
            return float(s % self.length)
        return float(min(max(s, 0.0), self.length))

    def _segment(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        pts = self.centerline
        if self.closed and i == pts.shape[0] - 1:
            return pts[-1], pts[0]
        return pts[i], pts[i + 1]


@dataclass(frozen=True)
class ObstacleCostParams:
    """Safety distance and noise scale of the boundary-avoidance factor."""

    epsilon: float = 0.015
    sigma_obs: float = 1e-4

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.sigma_obs <= 0:
            raise ValueError("sigma_obs must be positive")


@dataclass
class SdfGrid:
    """Regular grid of signed distances, positive inside the drivable region.

    `values[iy, ix]` is the distance at ``origin + (ix, iy) * resolution``.
    """

    origin: np.ndarray
    resolution: float
    width: int
    height: int
    values: np.ndarray

    def extent(self) -> tuple[float, float, float, float]:
        ox, oy = float(self.origin[0]), float(self.origin[1])
        return (ox, oy, ox + (self.width - 1) * self.resolution,
                oy + (self.height - 1) * self.resolution)

    def contains(self, point) -> bool:
        x0, y0, x1, y1 = self.extent()
        return bool(x0 <= point[0] <= x1 and y0 <= point[1] <= y1)


def hinge_cost(distance: float, epsilon: float) -> float:
    """Boundary penalty: -distance + epsilon when distance <= epsilon, else 0."""
    if distance <= epsilon:
        return -distance + epsilon
    return 0.0


# ---------------------------------------------------------------------------
# construction helpers

def _cumulative_arclength(points: np.ndarray, closed: bool) -> np.ndarray:
    diffs = np.diff(points, axis=0)
    seg = np.linalg.norm(diffs, axis=1)
    if closed:
        seg = np.append(seg, np.linalg.norm(points[0] - points[-1]))
    return np.concatenate([[0.0], np.cumsum(seg)])


def _resample_polyline(points: np.ndarray, closed: bool, n: int) -> np.ndarray:
    """n points uniformly spaced in arc length along the polyline."""
    pts = np.asarray(points, dtype=float)
    loop = np.vstack([pts, pts[:1]]) if closed else pts
    cum = _cumulative_arclength(loop, closed=False)
    total = cum[-1]
    if closed:
        stations = np.arange(n) * (total / n)
    else:
        stations = np.linspace(0.0, total, n)
    idx = np.clip(np.searchsorted(cum, stations, side="right") - 1, 0, len(loop) - 2)
    seg_len = np.maximum(cum[idx + 1] - cum[idx], 1e-18)
    t = (stations - cum[idx]) / seg_len
    return loop[idx] + t[:, None] * (loop[idx + 1] - loop[idx])


def _interp_profile(values: np.ndarray, cum: np.ndarray, stations: np.ndarray,
                    closed: bool, total: float) -> np.ndarray:
    """Arc-length interpolation of a per-waypoint scalar profile."""
    if closed:
        cum_ext = np.append(cum, total)
        vals_ext = np.append(values, values[0])
    else:
        cum_ext, vals_ext = cum, values
    return np.interp(stations, cum_ext, vals_ext)


def _normals(points: np.ndarray, closed: bool) -> np.ndarray:
    """Unit left normals from central-difference tangents."""
    if closed:
        fwd = np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0)
    else:
        fwd = np.empty_like(points)
        fwd[1:-1] = points[2:] - points[:-2]
        fwd[0] = points[1] - points[0]
        fwd[-1] = points[-1] - points[-2]
    norm = np.linalg.norm(fwd, axis=1, keepdims=True)
    t = fwd / np.maximum(norm, 1e-18)
    return np.column_stack([-t[:, 1], t[:, 0]])


def _segments_self_intersect(points: np.ndarray, closed: bool) -> bool:
    """Exact segment-pair intersection test, skipping shared endpoints."""
    pts = np.asarray(points, dtype=float)
    segs_a = pts if closed else pts[:-1]
    segs_b = np.roll(pts, -1, axis=0) if closed else pts[1:]
    n = segs_a.shape[0]
    for i in range(n - 2):
        a, b = segs_a[i], segs_b[i]
        lo = i + 2
        hi = n - 1 if (closed and i == 0) else n
        if lo >= hi:
            continue
        c = segs_a[lo:hi]
        d = segs_b[lo:hi]
        r = b - a
        s = d - c
        denom = r[0] * s[:, 1] - r[1] * s[:, 0]
        qp = c - a
        t_num = qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]
        u_num = qp[:, 0] * r[1] - qp[:, 1] * r[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = t_num / denom
            u = u_num / denom
        hit = (np.abs(denom) > 1e-15) & (t > 0) & (t < 1) & (u > 0) & (u < 1)
        if bool(np.any(hit)):
            return True
    return False


def _build_track(centerline: np.ndarray, w_left: np.ndarray, w_right: np.ndarray,
                 closed: bool, spacing: float | None) -> Track:
    """Resample to uniform arc spacing and offset boundaries along normals."""
    pts = np.asarray(centerline, dtype=float)
    if pts.shape[0] < 3:
        raise TrackLoadError("centerline needs at least 3 waypoints")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(seg < 1e-12):
        raise TrackLoadError(
            f"duplicate consecutive waypoints at index {int(np.argmin(seg)) + 1}")
    cum = _cumulative_arclength(pts, closed)
    total = float(cum[-1])
    if spacing is None:
        spacing = total / (pts.shape[0] if closed else pts.shape[0] - 1)
    n = max(int(round(total / spacing)), 3) if closed else max(int(round(total / spacing)) + 1, 3)

    resampled = _resample_polyline(pts, closed, n)
    stations = (np.arange(n) * (total / n)) if closed else np.linspace(0.0, total, n)
    cum_open = cum[:-1] if closed else cum
    wl = _interp_profile(np.asarray(w_left, dtype=float), cum_open, stations, closed, total)
    wr = _interp_profile(np.asarray(w_right, dtype=float), cum_open, stations, closed, total)
    if np.any(wl <= 0) or np.any(wr <= 0):
        raise TrackLoadError("track half-widths must be positive")

    normals = _normals(resampled, closed)
    left = resampled + normals * wl[:, None]
    right = resampled - normals * wr[:, None]
    for name, poly in (("left", left), ("right", right)):
        if _segments_self_intersect(poly, closed):
            raise TrackLoadError(f"{name} boundary self-intersects "
                                 "(track too narrow for its curvature?)")
    return Track(centerline=resampled, left_boundary=left, right_boundary=right,
                 closed=closed, half_width_left=wl, half_width_right=wr)


def _track_from_boundaries(left: np.ndarray, right: np.ndarray, closed: bool,
                           spacing: float | None) -> Track:
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.shape[0] < 3 or right.shape[0] < 3:
        raise TrackLoadError("boundary files need at least 3 points each")
    n = max(left.shape[0], right.shape[0])
    lb = _resample_polyline(left, closed, n)
    rb = _resample_polyline(right, closed, n)
    center = 0.5 * (lb + rb)
    w = 0.5 * np.linalg.norm(lb - rb, axis=1)
    return _build_track(center, w, w, closed, spacing)


# ---------------------------------------------------------------------------
# file formats

def _read_csv_rows(path: Path, expected_cols: int) -> np.ndarray:
    rows = []
    header_seen = False
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if not header_seen:
            header_seen = True
            try:
                [float(p) for p in parts]
            except ValueError:
                continue  # header line
        if len(parts) != expected_cols:
            raise TrackLoadError(
                f"{path}:{lineno}: expected {expected_cols} columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise TrackLoadError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise TrackLoadError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def _looks_closed(points: np.ndarray) -> bool:
    span = np.max(np.ptp(points, axis=0))
    return bool(np.linalg.norm(points[0] - points[-1]) < 0.05 * max(span, 1e-9))


def load_track(source, closed: bool | None = None,
               spacing: float | None = None) -> Track:
    """Load a track from a centerline CSV or a (left, right) boundary file pair.

    Centerline schema: ``x_c,y_c,w_left,w_right``; boundary schema: ``x,y`` per
    file.  A final waypoint repeating the first marks a closed track (the
    duplicate is dropped); pass `closed` to override the heuristic.
    """
    if isinstance(source, (tuple, list)) and len(source) == 2:
        left = _read_csv_rows(Path(source[0]), 2)
        right = _read_csv_rows(Path(source[1]), 2)
        if closed is None:
            closed = _looks_closed(left)
        if closed:
            left = _drop_closing_point(left)
            right = _drop_closing_point(right)
        return _track_from_boundaries(left, right, closed, spacing)

    data = _read_csv_rows(Path(source), 4)
    pts = data[:, :2]
    if closed is None:
        closed = _looks_closed(pts)
    if closed:
        keep = ~(np.linalg.norm(pts - pts[0], axis=1) < 1e-9)
        keep[0] = True
        data = data[keep]
    return _build_track(data[:, :2], data[:, 2], data[:, 3], closed, spacing)


def _drop_closing_point(points: np.ndarray) -> np.ndarray:
    if np.linalg.norm(points[0] - points[-1]) < 1e-9:
        return points[:-1]
    return points


def save_track_csv(track: Track, path) -> None:
    """Write the centerline schema; closed tracks repeat the first waypoint."""
    if track.half_width_left is None or track.half_width_right is None:
        raise TrackLoadError("track has no stored half-widths to save")
    lines = ["x_c,y_c,w_left,w_right"]
    rows = zip(track.centerline, track.half_width_left, track.half_width_right)
    for (x, y), wl, wr in rows:
        lines.append(f"{x!r},{y!r},{wl!r},{wr!r}")
    if track.closed:
        x, y = track.centerline[0]
        lines.append(f"{x!r},{y!r},{track.half_width_left[0]!r},{track.half_width_right[0]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# synthetic tracks

def make_ring(inner_radius: float = 1.0, outer_radius: float = 1.4,
              spacing: float = DEFAULT_SPACING,
              center: tuple[float, float] = (0.0, 0.0)) -> Track:
    """Annulus track; centerline is the middle circle."""
    if not 0 < inner_radius < outer_radius:
        raise TrackLoadError("need 0 < inner_radius < outer_radius")
    r = 0.5 * (inner_radius + outer_radius)
    w = 0.5 * (outer_radius - inner_radius)
    n = max(int(round(2 * math.pi * r / spacing)), 16)
    t = np.arange(n) * (2 * math.pi / n)
    pts = np.column_stack([center[0] + r * np.cos(t), center[1] + r * np.sin(t)])
    return _build_track(pts, np.full(n, w), np.full(n, w), True, spacing)


def make_oval(straight: float = 2.0, radius: float = 0.8, width: float = 0.4,
              spacing: float = DEFAULT_SPACING) -> Track:
    """Stadium loop: two straights joined by semicircular ends."""
    n_arc = max(int(round(math.pi * radius / spacing)), 8)
    n_str = max(int(round(straight / spacing)), 4)
    xs = np.linspace(-straight / 2, straight / 2, n_str, endpoint=False)
    bottom = np.column_stack([xs, np.full(n_str, -radius)])
    a = np.linspace(-math.pi / 2, math.pi / 2, n_arc, endpoint=False)
    right_arc = np.column_stack([straight / 2 + radius * np.cos(a), radius * np.sin(a)])
    top = np.column_stack([-xs, np.full(n_str, radius)])
    left_arc = np.column_stack([-straight / 2 + radius * np.cos(a + math.pi),
                                radius * np.sin(a + math.pi)])
    pts = np.vstack([bottom, right_arc, top, left_arc])
    hw = np.full(pts.shape[0], width / 2)
    return _build_track(pts, hw, hw, True, spacing)


def make_chicane(base_radius: float = 1.2, amplitude: float = 0.15, lobes: int = 4,
                 width: float = 0.4, spacing: float = DEFAULT_SPACING) -> Track:
    """Closed circuit with alternating esses: a radially modulated loop."""
    n = max(int(round(2 * math.pi * base_radius / spacing)) * 2, 64)
    t = np.arange(n) * (2 * math.pi / n)
    r = base_radius + amplitude * np.sin(lobes * t)
    pts = np.column_stack([r * np.cos(t), r * np.sin(t)])
    hw = np.full(n, width / 2)
    return _build_track(pts, hw, hw, True, spacing)


def make_straight(length: float = 10.0, width: float = 0.4,
                  spacing: float = DEFAULT_SPACING) -> Track:
    """Open straight run along +x from the origin."""
    n = max(int(round(length / spacing)) + 1, 3)
    xs = np.linspace(0.0, length, n)
    pts = np.column_stack([xs, np.zeros(n)])
    hw = np.full(n, width / 2)
    return _build_track(pts, hw, hw, False, spacing)


_GENERATORS = {
    "ring": make_ring,
    "oval": make_oval,
    "chicane": make_chicane,
    "straight": make_straight,
}


def generate_track(kind: str, **params) -> Track:
    try:
        gen = _GENERATORS[kind]
    except KeyError:
        raise TrackLoadError(
            f"unknown track kind '{kind}' (have: {', '.join(sorted(_GENERATORS))})")
    return gen(**params)


# ---------------------------------------------------------------------------
# signed distance field

def _closed_polyline(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return points, np.roll(points, -1, axis=0)


def _open_runoff_polygon(track: Track, runoff: float) -> np.ndarray:
    """Drivable polygon of an open track, extended past both ends."""
    lb, rb = track.left_boundary, track.right_boundary

    def extend(poly):
        t0 = poly[0] - poly[1]
        t0 /= max(np.linalg.norm(t0), 1e-12)
        t1 = poly[-1] - poly[-2]
        t1 /= max(np.linalg.norm(t1), 1e-12)
        return np.vstack([poly[0] + runoff * t0, poly, poly[-1] + runoff * t1])

    return np.vstack([extend(lb), extend(rb)[::-1]])


def _boundary_polygons(track: Track, runoff: float) -> list[np.ndarray]:
    if not track.closed:
        return [_open_runoff_polygon(track, runoff)]
    return [track.left_boundary, track.right_boundary]


def _min_distance_to_polygons(points: np.ndarray,
                              polygons: list[np.ndarray]) -> np.ndarray:
    """Unsigned distance from each point to the nearest polygon segment."""
    best = np.full(points.shape[0], np.inf)
    for poly in polygons:
        a, b = _closed_polyline(poly)
        for i in range(a.shape[0]):
            ab = b[i] - a[i]
            denom = float(ab @ ab)
            if denom < 1e-18:
                continue
            ap = points - a[i]
            t = np.clip((ap @ ab) / denom, 0.0, 1.0)
            dx = ap[:, 0] - t * ab[0]
            dy = ap[:, 1] - t * ab[1]
            d2 = dx * dx + dy * dy
            np.minimum(best, d2, out=best)
    return np.sqrt(best)


def _points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Vectorized even-odd rule."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(points.shape[0], dtype=bool)
    a, b = _closed_polyline(polygon)
    for i in range(a.shape[0]):
        x1, y1 = a[i]
        x2, y2 = b[i]
        crosses = (y1 > y) != (y2 > y)
        if not np.any(crosses):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xi)
    return inside


def _polygon_area(polygon: np.ndarray) -> float:
    a, b = _closed_polyline(polygon)
    return 0.5 * float(np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))


def _inside_mask(points: np.ndarray, track: Track, runoff: float) -> np.ndarray:
    if track.closed:
        polys = [track.left_boundary, track.right_boundary]
        areas = [abs(_polygon_area(p)) for p in polys]
        outer, inner = (polys[0], polys[1]) if areas[0] >= areas[1] else (polys[1], polys[0])
        return _points_in_polygon(points, outer) & ~_points_in_polygon(points, inner)
    return _points_in_polygon(points, _open_runoff_polygon(track, runoff))


def build_sdf(track: Track, resolution: float = DEFAULT_RESOLUTION,
              margin: float = 0.15, runoff: float = OPEN_TRACK_RUNOFF) -> SdfGrid:
    """Exact segment-distance field over the track bounding box plus margin."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    margin = max(margin, 3 * resolution)
    polys = _boundary_polygons(track, runoff)
    allpts = np.vstack(polys)
    lo = allpts.min(axis=0) - margin
    hi = allpts.max(axis=0) + margin
    width = int(math.ceil((hi[0] - lo[0]) / resolution)) + 1
    height = int(math.ceil((hi[1] - lo[1]) / resolution)) + 1

    xs = lo[0] + resolution * np.arange(width)
    ys = lo[1] + resolution * np.arange(height)
    gx, gy = np.meshgrid(xs, ys)
    cells = np.column_stack([gx.ravel(), gy.ravel()])

    dist = _min_distance_to_polygons(cells, polys)
    sign = np.where(_inside_mask(cells, track, runoff), 1.0, -1.0)
    values = (sign * dist).reshape(height, width)
    return SdfGrid(origin=lo.copy(), resolution=resolution,
                   width=width, height=height, values=values)


def query_sdf(grid: SdfGrid, point) -> tuple[float, np.ndarray]:
    """Bilinear distance and analytic patch gradient at a point.

    Points slightly outside the grid are clamped to the border and corrected
    by the out-of-field offset; far-outside points raise SdfQueryError.
    """
    px, py = float(point[0]), float(point[1])
    res = grid.resolution
    fx = (px - grid.origin[0]) / res
    fy = (py - grid.origin[1]) / res

    max_over = 3.0  # cells of tolerated overhang before a query is an error
    if not (-max_over <= fx <= grid.width - 1 + max_over
            and -max_over <= fy <= grid.height - 1 + max_over):
        raise SdfQueryError(f"point ({px:.4f}, {py:.4f}) is outside the field")

    cfx = min(max(fx, 0.0), float(grid.width - 1))
    cfy = min(max(fy, 0.0), float(grid.height - 1))
    ix = min(int(cfx), grid.width - 2)
    iy = min(int(cfy), grid.height - 2)
    tx = cfx - ix
    ty = cfy - iy

    v = grid.values
    v00 = v[iy, ix]
    v10 = v[iy, ix + 1]
    v01 = v[iy + 1, ix]
    v11 = v[iy + 1, ix + 1]
    value = (v00 * (1 - tx) * (1 - ty) + v10 * tx * (1 - ty)
             + v01 * (1 - tx) * ty + v11 * tx * ty)
    gradient = np.array([
        ((v10 - v00) * (1 - ty) + (v11 - v01) * ty) / res,
        ((v01 - v00) * (1 - tx) + (v11 - v10) * tx) / res,
    ])

    dx = fx - cfx
    dy = fy - cfy
    if dx != 0.0 or dy != 0.0:
        over = math.hypot(dx, dy) * res
        value -= over
        gradient = np.array([-dx, -dy]) * (res / over)
    return float(value), gradient


# ---------------------------------------------------------------------------
# binary cache

_SDF_MAGIC = b"SDF1"
_SDF_HEADER = struct.Struct("<4sII3d")


def save_sdf(grid: SdfGrid, path) -> None:
    header = _SDF_HEADER.pack(_SDF_MAGIC, grid.width, grid.height,
                              float(grid.origin[0]), float(grid.origin[1]),
                              grid.resolution)
    body = grid.values.astype("<f8").tobytes(order="C")
    Path(path).write_bytes(header + body)


def load_sdf(path) -> SdfGrid:
    blob = Path(path).read_bytes()
    if len(blob) < _SDF_HEADER.size:
        raise TrackLoadError(f"{path}: truncated SDF cache")
    magic, width, height, ox, oy, res = _SDF_HEADER.unpack_from(blob)
    if magic != _SDF_MAGIC:
        raise TrackLoadError(f"{path}: bad magic {magic!r}")
    expected = _SDF_HEADER.size + 8 * width * height
    if len(blob) != expected:
        raise TrackLoadError(f"{path}: size {len(blob)} != expected {expected}")
    values = np.frombuffer(blob, dtype="<f8", offset=_SDF_HEADER.size).reshape(height, width)
    return SdfGrid(origin=np.array([ox, oy]), resolution=res,
                   width=width, height=height, values=values.copy())
