"""Pinhole cameras: sampling, projection, and plane deprojection.

Image convention: origin at the top-left, x right, y down, pixel centers at
integer + 0.5. Camera frame: z forward (optical axis), x right, y down, so a
world-up vector maps to -y in front of an upright camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DeprojectionError, FramingFailure, RayParallelToPlane
from .seeding import rng_from_seed


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))
    """4x4 rigid transform taking world points into the camera frame."""

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        pose = np.asarray(self.pose, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "pose", pose)
        r = pose[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-8) or not math.isclose(
            float(np.linalg.det(r)), 1.0, abs_tol=1e-8
        ):
            raise ValueError("pose rotation block is not a proper rotation")
        if not np.allclose(pose[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("pose bottom row must be [0, 0, 0, 1]")

    @property
    def origin(self) -> np.ndarray:
        """Camera center in world coordinates."""
        r = self.pose[:3, :3]
        t = self.pose[:3, 3]
        return -r.T @ t

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.pose[:3, :3].T + self.pose[:3, 3]


def project(camera: CameraModel, point) -> tuple[float, float, float]:
    """Project one world point; returns (pixel x, pixel y, depth in meters)."""
    q = camera.world_to_camera(np.asarray(point, dtype=np.float64).reshape(3))
    if q[2] <= 0.0:
        raise BehindCamera(f"point at camera depth {q[2]:.6f} m")
    u = camera.fx * q[0] / q[2] + camera.cx
    v = camera.fy * q[1] / q[2] + camera.cy
    return float(u), float(v), float(q[2])


def project_points(camera: CameraModel, points: np.ndarray):
    """Vectorized projection.

    Returns (pixels (N,2), depths (N,), in_front (N,) bool). Pixels of
    behind-camera points are NaN rather than raising, so callers can mask.
    """
    q = camera.world_to_camera(points)
    depth = q[:, 2].copy()
    in_front = depth > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * q[:, 0] / depth + camera.cx
        v = camera.fy * q[:, 1] / depth + camera.cy
    pix = np.stack([u, v], axis=1)
    pix[~in_front] = np.nan
    return pix, depth, in_front


def camera_ray(camera: CameraModel, pixel) -> tuple[np.ndarray, np.ndarray]:
    """World-space (origin, unit direction) of the ray through a pixel."""
    u, v = float(pixel[0]), float(pixel[1])
    d_cam = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    r = camera.pose[:3, :3]
    d_world = r.T @ d_cam
    d_world /= np.linalg.norm(d_world)
    return camera.origin, d_world


def deproject_to_plane(camera: CameraModel, pixel, plane) -> np.ndarray:
    """Intersect the pixel ray with a plane {normal, offset}: n . x = offset."""
    normal = np.asarray(plane["normal"], dtype=np.float64).reshape(3)
    norm = np.linalg.norm(normal)
    if norm == 0.0:
        raise DeprojectionError("plane normal is zero")
    normal = normal / norm
    offset = float(plane["offset"]) / norm
    origin, direction = camera_ray(camera, pixel)
    denom = float(normal @ direction)
    if abs(denom) < 1e-12:
        raise RayParallelToPlane(f"ray direction {direction} lies in the plane")
    t = (offset - float(normal @ origin)) / denom
    if t <= 0.0:
        raise DeprojectionError("plane intersection is behind the camera")
    return origin + t * direction


def look_at_pose(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World->camera pose with the optical axis pointing from eye at target."""
    eye = np.asarray(eye, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    up = np.asarray(up, dtype=np.float64).reshape(3)
    z = target - eye
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise ValueError("eye and target coincide")
    z = z / nz
    # image-down is -up made orthogonal to the optical axis
    y = -up - float(-up @ z) * z
    if np.linalg.norm(y) < 1e-9:
        # straight-down view: pick a stable image-down vector
        y = np.array([0.0, 1.0, 0.0]) - float(z[1]) * z
        if np.linalg.norm(y) < 1e-9:
            y = np.array([1.0, 0.0, 0.0]) - float(z[0]) * z
    y = y / np.linalg.norm(y)
    x = np.cross(y, z)
    r = np.stack([x, y, z])
    pose = np.eye(4)
    pose[:3, :3] = r
    pose[:3, 3] = -r @ eye
    return pose


def sample_camera(seed: int, mesh_bbox, ranges: dict | None = None) -> CameraModel:
    """Draw a hemisphere camera that frames the whole bbox with margin.

    Rejection-resamples pose and focal length until every bbox corner (a
    conservative stand-in for every garment vertex) projects inside the image
    with the configured margin, then raises FramingFailure when the ranges
    cannot frame the garment within max_attempts draws.
    """
    if ranges is None:
        from .config import default_config

        ranges = default_config().camera.model_dump()
    elif hasattr(ranges, "model_dump"):
        ranges = ranges.model_dump()

    lo, hi = (np.asarray(b, dtype=np.float64).reshape(3) for b in mesh_bbox)
    if not np.all(hi >= lo):
        raise ValueError("empty bbox")
    center = 0.5 * (lo + hi)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])

    width = int(ranges["width"])
    height = int(ranges["height"])
    margin = float(ranges["margin"])
    rng = rng_from_seed(seed)
    for _ in range(int(ranges["max_attempts"])):
        fov = math.radians(rng.uniform(*ranges["fov_deg"]))
        radius = rng.uniform(*ranges["radius"])
        elev = math.radians(rng.uniform(*ranges["elevation_deg"]))
        azim = rng.uniform(0.0, 2.0 * math.pi)
        jitter = rng.uniform(-ranges["look_jitter"], ranges["look_jitter"], size=3)
        jitter[2] = 0.0
        eye = center + radius * np.array(
            [math.cos(elev) * math.cos(azim), math.cos(elev) * math.sin(azim), math.sin(elev)]
        )
        f = 0.5 * width / math.tan(0.5 * fov)
        cam = CameraModel(
            fx=f,
            fy=f,
            cx=width / 2.0,
            cy=height / 2.0,
            width=width,
            height=height,
            pose=look_at_pose(eye, center + jitter),
        )
        pix, _, in_front = project_points(cam, corners)
        if not in_front.all():
            continue
        x_ok = (pix[:, 0] >= margin * width) & (pix[:, 0] <= (1.0 - margin) * width)
        y_ok = (pix[:, 1] >= margin * height) & (pix[:, 1] <= (1.0 - margin) * height)
        if bool(np.all(x_ok & y_ok)):
            return cam
    raise FramingFailure(
        f"no camera framed the garment in {ranges['max_attempts']} attempts; "
        "radius/fov ranges are too tight for this garment size"
    )
