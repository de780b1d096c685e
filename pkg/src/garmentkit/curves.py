"""Planar boundary geometry.

A garment outline is a closed chain of segments (lines, cubic Beziers,
circular corner arcs) in the rest plane, in meters. Segments sample to
polylines with a spacing cap so the mesher can treat the boundary as a
polygon whose edges already respect the target edge length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import shapely

from .errors import DegenerateBoundary

# Spacing used when flattening curves just to measure arc length.
_LENGTH_SAMPLES = 256


def _as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=np.float64).reshape(2)
    return a


@dataclass(frozen=True, eq=False)
class LineSegment:
    """Straight segment from p0 to p1."""

    p0: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p0", _as_point(self.p0))
        object.__setattr__(self, "p1", _as_point(self.p1))

    def point(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.p0 + np.multiply.outer(t, self.p1 - self.p0)

    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    def sample(self, max_spacing: float, tol: float) -> np.ndarray:
        """Evenly spaced points including the start, excluding the end."""
        n = max(1, math.ceil(self.length() / max_spacing))
        t = np.arange(n, dtype=np.float64) / n
        return self.point(t)


@dataclass(frozen=True, eq=False)
class CubicBezier:
    """Cubic Bezier with control points p0..p3."""

    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray

    def __post_init__(self):
        for name in ("p0", "p1", "p2", "p3"):
            object.__setattr__(self, name, _as_point(getattr(self, name)))

    def point(self, t):
        t = np.asarray(t, dtype=np.float64)[..., None]
        u = 1.0 - t
        return (
            u * u * u * self.p0
            + 3.0 * u * u * t * self.p1
            + 3.0 * u * t * t * self.p2
            + t * t * t * self.p3
        )

    def length(self) -> float:
        t = np.linspace(0.0, 1.0, _LENGTH_SAMPLES + 1)
        pts = self.point(t)
        return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())

    def _flat_segments(self, tol: float) -> int:
        # Double the uniform-t subdivision until every chord midpoint sits
        # within tol of the curve midpoint.
        n = 4
        while n <= 4096:
            t_end = np.linspace(0.0, 1.0, n + 1)
            t_mid = (t_end[:-1] + t_end[1:]) / 2.0
            chord_mid = (self.point(t_end[:-1]) + self.point(t_end[1:])) / 2.0
            dev = np.linalg.norm(self.point(t_mid) - chord_mid, axis=1)
            if float(dev.max()) < tol:
                return n
            n *= 2
        return n

    def sample(self, max_spacing: float, tol: float) -> np.ndarray:
        # Equal arc-length spacing: uniform-t chords can exceed max_spacing
        # where the parametric speed peaks.
        n = max(self._flat_segments(tol), math.ceil(self.length() / max_spacing), 1)
        fine = np.linspace(0.0, 1.0, max(64, 8 * n) + 1)
        pts = self.point(fine)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        targets = cum[-1] * np.arange(n) / n
        t = np.interp(targets, cum, fine)
        t[0] = 0.0
        return self.point(t)


@dataclass(frozen=True, eq=False)
class ArcSegment:
    """Circular arc: angle runs from angle0 to angle1 (signed sweep)."""

    center: np.ndarray
    radius: float
    angle0: float
    angle1: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_point(self.center))
        if self.radius <= 0.0:
            raise ValueError("arc radius must be positive")

    @property
    def sweep(self) -> float:
        return self.angle1 - self.angle0

    def point(self, t):
        t = np.asarray(t, dtype=np.float64)
        ang = self.angle0 + t * self.sweep
        return self.center + self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)

    def midpoint(self) -> np.ndarray:
        """Point at half sweep; corner anchors live here."""
        return np.asarray(self.point(0.5), dtype=np.float64)

    def length(self) -> float:
        return abs(self.sweep) * self.radius

    def sample(self, max_spacing: float, tol: float) -> np.ndarray:
        # Even count keeps the arc midpoint among the samples, so anchor
        # points coincide with boundary vertices.
        n = 2 * max(1, math.ceil(self.length() / (2.0 * max_spacing)))
        t = np.arange(n, dtype=np.float64) / n
        return self.point(t)


Segment = LineSegment | CubicBezier | ArcSegment


@dataclass(eq=False)
class BoundaryCurve:
    """Closed counter-clockwise chain of segments.

    Raises DegenerateBoundary at construction when the chain does not
    close, encloses (near-)zero area, or self-intersects at the validation
    sampling resolution.
    """

    segments: list

    _CLOSURE_TOL = 1e-9
    _VALIDATION_SPACING = 0.01

    def __post_init__(self):
        if len(self.segments) < 2:
            raise DegenerateBoundary("boundary needs at least two segments")
        for a, b in zip(self.segments, self.segments[1:] + self.segments[:1]):
            gap = float(np.linalg.norm(np.asarray(a.point(1.0)) - np.asarray(b.point(0.0))))
            if gap > self._CLOSURE_TOL:
                raise DegenerateBoundary(f"segment chain gap {gap:.3g} m")
        poly = self.sample_polyline(self._VALIDATION_SPACING, tol=0.002)
        ring = shapely.Polygon(poly)
        if not ring.is_valid:
            raise DegenerateBoundary("outline self-intersects")
        if ring.area < 1e-6:
            raise DegenerateBoundary("outline encloses no area")
        if not shapely.LinearRing(poly).is_ccw:
            raise DegenerateBoundary("outline must wind counter-clockwise")

    def length(self) -> float:
        return float(sum(seg.length() for seg in self.segments))

    def sample_polyline(self, max_spacing: float, tol: float) -> np.ndarray:
        """Closed-loop polyline, one row per vertex, last != first.

        Every segment endpoint (and arc midpoint) is a polyline vertex and
        consecutive vertices are at most max_spacing apart.
        """
        parts = [seg.sample(max_spacing, tol) for seg in self.segments]
        return np.concatenate(parts, axis=0)

    def polygon(self, max_spacing: float | None = None, tol: float = 0.002) -> shapely.Polygon:
        spacing = self._VALIDATION_SPACING if max_spacing is None else max_spacing
        return shapely.Polygon(self.sample_polyline(spacing, tol))
