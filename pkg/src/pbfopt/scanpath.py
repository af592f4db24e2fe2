"""Piecewise-linear beam paths: segments, hatch lines, timing, offset paths.

A scan path is an ordered list of straight surface segments (z = 0).  Beam
parameters are constant on each segment, so the path geometry is fixed once
and for all while segment times are derived from the current speeds.  All
quantities are SI (meters, seconds, radians); segment and hatch-line indices
are 0-based throughout the Python API.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Tight tolerances: inputs are synthetic geometry, so false merges are a
# bigger hazard than false splits.
ANGLE_TOL = 1e-9  # rad
CONNECT_TOL = 1e-12  # m


class PathError(ValueError):
    """Invalid path geometry or an out-of-range path query."""


@dataclass(frozen=True)
class Segment:
    """One straight piece of the beam path, z = 0 at both ends."""

    index: int
    start: np.ndarray
    end: np.ndarray
    length: float
    angle: float


@dataclass(frozen=True)
class HatchLine:
    """Maximal run of connected, equal-angle segments."""

    index: int
    first_segment: int
    last_segment: int  # inclusive
    angle: float


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


class ScanPath:
    """Immutable beam path with per-segment geometry and hatch structure.

    Parameters
    ----------
    endpoints : array_like, shape (N, 2, 2) or (N, 2, 3)
        Start/end point of each segment in meters.  A z component, when given,
        must be exactly zero.
    """

    def __init__(self, endpoints):
        pts = np.asarray(endpoints, dtype=float)
        if pts.ndim != 3 or pts.shape[1] != 2 or pts.shape[2] not in (2, 3):
            raise PathError("endpoints must have shape (N, 2, 2) or (N, 2, 3)")
        if pts.shape[0] == 0:
            raise PathError("path needs at least one segment")
        if pts.shape[2] == 3 and np.any(pts[:, :, 2] != 0.0):
            bad = int(np.nonzero(np.any(pts[:, :, 2] != 0.0, axis=1))[0][0])
            raise PathError(f"segment {bad}: endpoints must lie on the surface z = 0")
        xy = pts[:, :, :2]

        delta = xy[:, 1, :] - xy[:, 0, :]
        length = np.hypot(delta[:, 0], delta[:, 1])
        if np.any(length <= 0.0):
            bad = int(np.nonzero(length <= 0.0)[0][0])
            raise PathError(f"segment {bad}: zero-length segment")
        angle = np.arctan2(delta[:, 1], delta[:, 0])

        self.start = _readonly(np.column_stack([xy[:, 0, :], np.zeros(len(xy))]))
        self.end = _readonly(np.column_stack([xy[:, 1, :], np.zeros(len(xy))]))
        self.length = _readonly(length)
        self.angle = _readonly(angle)
        gamma = np.concatenate([[0.0], np.cumsum(length)])
        self.distance_start = _readonly(gamma[:-1])  # scanning distance at x_k^i
        self.total_length = float(gamma[-1])

        self.connected = _readonly(self._connectivity())
        self.hatch_lines = self._detect_hatch_lines()
        line_of = np.empty(self.n_segments, dtype=np.intp)
        for hl in self.hatch_lines:
            line_of[hl.first_segment : hl.last_segment + 1] = hl.index
        line_of.flags.writeable = False
        self._line_of = line_of

    # -- structure ---------------------------------------------------------

    @property
    def n_segments(self) -> int:
        return len(self.length)

    @property
    def n_lines(self) -> int:
        return len(self.hatch_lines)

    def _connectivity(self) -> np.ndarray:
        """connected[k] is True when segment k starts where k-1 ends."""
        conn = np.zeros(self.n_segments, dtype=bool)
        if self.n_segments > 1:
            gap = np.linalg.norm(self.end[:-1] - self.start[1:], axis=1)
            conn[1:] = gap <= CONNECT_TOL
        return conn

    def _detect_hatch_lines(self) -> tuple[HatchLine, ...]:
        lines = []
        first = 0
        for k in range(1, self.n_segments):
            same_angle = abs(self.angle[k] - self.angle[first]) <= ANGLE_TOL
            if not (self.connected[k] and same_angle):
                lines.append(HatchLine(len(lines), first, k - 1, float(self.angle[first])))
                first = k
        lines.append(HatchLine(len(lines), first, self.n_segments - 1, float(self.angle[first])))
        return tuple(lines)

    def segment(self, k: int) -> Segment:
        if not 0 <= k < self.n_segments:
            raise PathError(f"segment index {k} out of range")
        return Segment(k, self.start[k], self.end[k], float(self.length[k]), float(self.angle[k]))

    def line_of(self, k: int) -> int:
        """Hatch line containing segment k."""
        if not 0 <= k < self.n_segments:
            raise PathError(f"segment index {k} out of range")
        return int(self._line_of[k])

    def line_first_segment(self, line: int) -> int:
        """First segment of hatch line `line`; n_segments when line == n_lines."""
        if line == self.n_lines:
            return self.n_segments
        if not 0 <= line < self.n_lines:
            raise PathError(f"hatch line index {line} out of range")
        return self.hatch_lines[line].first_segment

    def line_distance_bounds(self, line: int) -> tuple[float, float]:
        """Scanning-distance interval [start, end] covered by a hatch line."""
        hl = self.hatch_lines[line]
        lo = float(self.distance_start[hl.first_segment])
        hi = float(self.distance_start[hl.last_segment] + self.length[hl.last_segment])
        return lo, hi

    # -- geometry ----------------------------------------------------------

    def point_at(self, k: int, fraction: float) -> np.ndarray:
        """Point on segment k at the given arclength fraction in [0, 1]."""
        if not 0.0 <= fraction <= 1.0:
            raise PathError(f"arclength fraction {fraction} outside [0, 1]")
        if not 0 <= k < self.n_segments:
            raise PathError(f"segment index {k} out of range")
        return self.start[k] + fraction * (self.end[k] - self.start[k])

    def scan_distance(self, k: int, fraction: float) -> float:
        """Cumulative path length from the path start to a point on segment k."""
        if not 0.0 <= fraction <= 1.0:
            raise PathError(f"arclength fraction {fraction} outside [0, 1]")
        if not 0 <= k < self.n_segments:
            raise PathError(f"segment index {k} out of range")
        return float(self.distance_start[k] + fraction * self.length[k])


def hatch_line_maps(path: ScanPath) -> tuple[np.ndarray, np.ndarray]:
    """Return (line -> first segment, segment -> line) index maps."""
    first = np.array([hl.first_segment for hl in path.hatch_lines], dtype=np.intp)
    return first, np.asarray(path._line_of)


# -- timing ----------------------------------------------------------------


@dataclass(frozen=True)
class ScanTiming:
    """Segment entry/exit times induced by per-segment speeds."""

    t_start: np.ndarray
    t_end: np.ndarray

    @property
    def total_time(self) -> float:
        return float(self.t_end[-1])


def compute_timing(path: ScanPath, speeds, jump_dwell: float = 0.0) -> ScanTiming:
    """Derive segment times from speeds.

    Positions are fixed; times follow from t_{k}^f = t_k^i + L_k / v_k.
    Disconnected consecutive segments are repositioned instantaneously unless
    a per-jump dwell is given.
    """
    v = np.asarray(speeds, dtype=float)
    if v.shape != (path.n_segments,):
        raise PathError(f"expected {path.n_segments} speeds, got shape {v.shape}")
    if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
        raise PathError("speeds must be positive and finite")
    if jump_dwell < 0.0:
        raise PathError("jump dwell must be nonnegative")

    dur = path.length / v
    gap = np.zeros(path.n_segments)
    gap[1:] = np.where(path.connected[1:], 0.0, jump_dwell)
    t_start = np.empty(path.n_segments)
    t_end = np.empty(path.n_segments)
    t = 0.0
    for k in range(path.n_segments):  # sequential so t_start[k+1] >= t_end[k] exactly
        t_start[k] = t + gap[k]
        t_end[k] = t_start[k] + dur[k]
        t = t_end[k]
    return ScanTiming(t_start=_readonly(t_start), t_end=_readonly(t_end))


def beam_position(path: ScanPath, timing: ScanTiming, t: float) -> np.ndarray:
    """Beam center position at time t in [0, T].

    Within a jump dwell the beam is taken to sit at the next segment's start.
    """
    if t < 0.0 or t > timing.total_time:
        raise PathError(f"time {t} outside [0, {timing.total_time}]")
    if t == 0.0:
        return path.start[0].copy()
    k = int(np.searchsorted(timing.t_end, t, side="left"))
    k = min(k, path.n_segments - 1)
    if t <= timing.t_start[k]:  # inside a dwell gap
        return path.start[k].copy()
    frac = (t - timing.t_start[k]) / (timing.t_end[k] - timing.t_start[k])
    return path.start[k] + frac * (path.end[k] - path.start[k])


# -- secondary path ----------------------------------------------------------

GLOBAL_OFFSET = "global_offset"
NORMAL_OFFSET = "normal_offset"


@dataclass(frozen=True)
class SecondaryPath:
    """Reference path at lateral width w and depth d from the beam path.

    global_offset shifts every point by (0, +w, -d); normal_offset shifts by
    (+w sin(theta_n), -w cos(theta_n), -d) using the owning segment's angle.
    """

    width: float
    depth: float
    mode: str
    start: np.ndarray
    end: np.ndarray
    _shift: np.ndarray

    def map_points(self, points: np.ndarray, segment_index) -> np.ndarray:
        """Map beam-path points (on the given segments) onto this path."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts + self._shift[np.asarray(segment_index, dtype=np.intp)]


def build_secondary_path(
    path: ScanPath, width: float, depth: float, mode: str = GLOBAL_OFFSET
) -> SecondaryPath:
    if depth < 0.0:
        raise PathError("secondary path depth must be nonnegative")
    if mode == GLOBAL_OFFSET:
        shift = np.tile([0.0, width, -depth], (path.n_segments, 1))
    elif mode == NORMAL_OFFSET:
        shift = np.column_stack(
            [
                width * np.sin(path.angle),
                -width * np.cos(path.angle),
                np.full(path.n_segments, -depth),
            ]
        )
    else:
        raise PathError(f"unknown secondary path mode {mode!r}")
    return SecondaryPath(
        width=float(width),
        depth=float(depth),
        mode=mode,
        start=_readonly(path.start + shift),
        end=_readonly(path.end + shift),
        _shift=_readonly(shift),
    )


# -- generators and path files ----------------------------------------------


def snake_path(
    n_lines: int, line_length: float, line_offset: float, segments_per_line: int
) -> ScanPath:
    """Back-and-forth hatching along x, advancing by line_offset in +y.

    The jump from one line to the next is a repositioning, not a melt
    segment, so the path holds n_lines * segments_per_line segments.
    """
    if n_lines < 1 or segments_per_line < 1:
        raise PathError("snake generator needs n_lines >= 1, segments_per_line >= 1")
    endpoints = []
    for line in range(n_lines):
        y = line * line_offset
        xs = np.linspace(0.0, line_length, segments_per_line + 1)
        if line % 2 == 1:
            xs = xs[::-1]
        for a, b in zip(xs[:-1], xs[1:]):
            endpoints.append([[a, y], [b, y]])
    return ScanPath(np.array(endpoints))


def annulus_quadrant_path(
    r_inner: float,
    r_outer: float,
    n_lines: int,
    delta_angle_deg: float,
    segments_per_line: int,
) -> ScanPath:
    """Radial hatch lines fanning counter-clockwise across a quarter annulus.

    Line l sits at angle l * delta_angle from the x-axis and runs between the
    inner and outer radius, alternating outward/inward travel.
    """
    if n_lines < 1 or segments_per_line < 1:
        raise PathError("annulus generator needs n_lines >= 1, segments_per_line >= 1")
    if not 0.0 < r_inner < r_outer:
        raise PathError("annulus generator needs 0 < r_inner < r_outer")
    endpoints = []
    for line in range(n_lines):
        phi = math.radians(line * delta_angle_deg)
        u = np.array([math.cos(phi), math.sin(phi)])
        rs = np.linspace(r_inner, r_outer, segments_per_line + 1)
        if line % 2 == 1:
            rs = rs[::-1]
        for a, b in zip(rs[:-1], rs[1:]):
            endpoints.append([a * u, b * u])
    return ScanPath(np.array(endpoints))


def path_from_spec(spec: dict) -> ScanPath:
    """Build a path from a JSON-compatible definition (millimeter units).

    Either an explicit segment list {"segments": [[[x0,y0],[x1,y1]], ...]} or
    a named generator ("snake", "annulus_quadrant") with its parameters.
    """
    if "segments" in spec:
        pts_mm = np.asarray(spec["segments"], dtype=float)
        return ScanPath(pts_mm * 1e-3)
    gen = spec.get("generator")
    if gen == "snake":
        return snake_path(
            n_lines=int(spec["lines"]),
            line_length=float(spec["line_length_mm"]) * 1e-3,
            line_offset=float(spec["line_offset_mm"]) * 1e-3,
            segments_per_line=int(spec["segments_per_line"]),
        )
    if gen == "annulus_quadrant":
        return annulus_quadrant_path(
            r_inner=float(spec["r_inner_mm"]) * 1e-3,
            r_outer=float(spec["r_outer_mm"]) * 1e-3,
            n_lines=int(spec["n_lines"]),
            delta_angle_deg=float(spec["delta_angle_deg"]),
            segments_per_line=int(spec["segments_per_line"]),
        )
    raise PathError(f"path spec needs 'segments' or a known 'generator', got {spec!r}")


def load_path_file(filename) -> ScanPath:
    with open(Path(filename)) as fh:
        return path_from_spec(json.load(fh))
