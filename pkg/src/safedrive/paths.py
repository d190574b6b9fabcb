"""Sampled reference centerlines with arc-length parameterization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_SAMPLE_SPACING = 0.5  # m, invariant on adjacent samples


class PathExtentError(ValueError):
    """Queried position or station falls outside the sampled path."""


@dataclass
class ReferencePath:
    """Polyline centerline with per-sample station, heading and curvature.

    ``speed`` is the (constant) reference speed along the path.
    """

    xs: np.ndarray
    ys: np.ndarray
    speed: float
    stations: np.ndarray = field(init=False)
    headings: np.ndarray = field(init=False)
    curvatures: np.ndarray = field(init=False)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if self.xs.size < 2:
            raise ValueError("path needs at least two samples")
        dx = np.diff(self.xs)
        dy = np.diff(self.ys)
        seg_len = np.hypot(dx, dy)
        if np.any(seg_len <= 0.0):
            raise ValueError("path samples must be strictly advancing")
        if np.any(seg_len > MAX_SAMPLE_SPACING):
            raise ValueError(
                f"adjacent sample spacing must be <= {MAX_SAMPLE_SPACING} m"
            )
        self.stations = np.concatenate(([0.0], np.cumsum(seg_len)))
        seg_heading = np.arctan2(dy, dx)
        # per-sample heading: average of adjacent segment headings (unwrapped)
        unwrapped = np.unwrap(seg_heading)
        h = np.empty_like(self.stations)
        h[0] = unwrapped[0]
        h[-1] = unwrapped[-1]
        h[1:-1] = 0.5 * (unwrapped[:-1] + unwrapped[1:])
        self.headings = h
        self.curvatures = np.gradient(h, self.stations)

    @classmethod
    def from_function(cls, fn, x_max: float, speed: float, spacing: float = 0.25,
                      x_min: float = 0.0) -> "ReferencePath":
        """Sample ``y = fn(x)`` on a uniform x grid."""
        n = int(np.ceil((x_max - x_min) / spacing)) + 1
        xs = np.linspace(x_min, x_max, n)
        ys = np.asarray([fn(x) for x in xs], dtype=float)
        return cls(xs, ys, speed)

    @classmethod
    def straight(cls, length: float, speed: float, y0: float = 0.0,
                 spacing: float = 0.25) -> "ReferencePath":
        n = int(np.ceil(length / spacing)) + 1
        xs = np.linspace(0.0, length, n)
        return cls(xs, np.full(n, y0), speed)

    @property
    def length(self) -> float:
        return float(self.stations[-1])

    def project(self, x: float, y: float):
        """Closest-point projection onto the polyline.

        Returns ``(station, signed lateral offset, heading)``; offset is
        positive to the left of the path tangent.
        """
        ax, ay = self.xs[:-1], self.ys[:-1]
        bx, by = self.xs[1:], self.ys[1:]
        ex, ey = bx - ax, by - ay
        seg2 = ex * ex + ey * ey
        t = np.clip(((x - ax) * ex + (y - ay) * ey) / seg2, 0.0, 1.0)
        px, py = ax + t * ex, ay + t * ey
        d2 = (x - px) ** 2 + (y - py) ** 2
        i = int(np.argmin(d2))
        station = self.stations[i] + t[i] * np.sqrt(seg2[i])
        # signed offset: cross(tangent, point - foot)
        norm = np.sqrt(seg2[i])
        tx, ty = ex[i] / norm, ey[i] / norm
        offset = tx * (y - py[i]) - ty * (x - px[i])
        if (i == 0 and t[i] == 0.0 and d2[i] > 1e-12 and
                (x - ax[0]) * tx + (y - ay[0]) * ty < 0.0):
            raise PathExtentError("position before path start")
        if i == len(ax) - 1 and t[i] == 1.0:
            raise PathExtentError("position beyond path end")
        return float(station), float(offset), float(self.heading_at(station))

    def _check_station(self, s: float):
        if s < self.stations[0] - 1e-9 or s > self.stations[-1] + 1e-9:
            raise PathExtentError(f"station {s} outside [0, {self.length}]")

    def point_at(self, s: float):
        self._check_station(s)
        x = np.interp(s, self.stations, self.xs)
        y = np.interp(s, self.stations, self.ys)
        return float(x), float(y)

    def heading_at(self, s: float) -> float:
        self._check_station(s)
        return float(np.interp(s, self.stations, self.headings))

    def curvature_at(self, s: float) -> float:
        self._check_station(s)
        return float(np.interp(s, self.stations, self.curvatures))

    def normal_at(self, s: float):
        h = self.heading_at(s)
        return -np.sin(h), np.cos(h)
