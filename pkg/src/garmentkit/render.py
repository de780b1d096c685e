"""Visibility raycasting and z-buffer depth rasterization.

Two independent occlusion oracles over the same camera model:

- raycast: per-vertex segment tests against every triangle (Moller-Trumbore),
  excluding triangles incident to the queried vertex. This is the reference
  used for keypoint visibility labels.
- z-buffer: perspective-correct software rasterizer. Used for depth previews
  and as a cross-check oracle; the two agree away from silhouette edges.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numba
import numpy as np

from .camera import CameraModel, project_points
from .mesh import KeypointBinding

# Near-origin guard: hits closer to the camera than this never count, which
# keeps degenerate zero-length segments out of the occlusion test.
DEPTH_EPSILON = 1e-5
# The mesh is the midsurface of cloth with physical thickness. A triangle
# within this distance of the queried point along the ray is the same pressed
# surface, not an occluder: separated layers sit a full contact radius (3 mm)
# apart, while grazing wrinkles pass within a millimeter or two of points
# they do not truly cover. Kept strictly above the z-buffer depth bias so the
# two occlusion tests cannot disagree about a layer that thin.
SURFACE_EPSILON = 2.5e-3
# Barycentric slack for the ray-triangle test.
_BARY_EPSILON = 1e-9
@dataclass(frozen=True)
class DepthImage:
    """Rasterized depth plus the id of the winning triangle per pixel."""

    width: int
    height: int
    depth: np.ndarray  # (height, width), meters, +inf = background
    triangle_ids: np.ndarray | None = None  # (height, width) int32, -1 = background

    def __post_init__(self):
        if self.depth.shape != (self.height, self.width):
            raise ValueError("depth array shape does not match width/height")

    def finite(self) -> np.ndarray:
        return np.isfinite(self.depth)


@dataclass(frozen=True)
class KeypointView:
    """Where one labelled keypoint lands in an image."""

    pixel: tuple[float, float] | None  # None when behind the camera
    depth: float | None
    visible: bool
    behind_camera: bool = False


def _in_frame(camera: CameraModel, pix: np.ndarray, in_front: np.ndarray) -> np.ndarray:
    ok = in_front.copy()
    sel = np.flatnonzero(in_front)
    p = pix[sel]
    ok[sel] = (
        (p[:, 0] >= 0.0) & (p[:, 0] < camera.width) & (p[:, 1] >= 0.0) & (p[:, 1] < camera.height)
    )
    return ok


def visible_vertices(camera: CameraModel, positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Per-vertex raycast visibility.

    Visible means unoccluded AND inside the image frame; vertices behind the
    camera or out of frame cannot appear in a rendered image.
    """
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    tris = np.ascontiguousarray(triangles, dtype=np.int64)
    ids = np.arange(len(pos), dtype=np.int64)
    vis = _raycast_visible_against(
        camera.origin, pos, ids, pos, tris, DEPTH_EPSILON, SURFACE_EPSILON, _BARY_EPSILON
    )
    pix, _, in_front = project_points(camera, pos)
    return vis & _in_frame(camera, pix, in_front)


def keypoint_visibility(
    camera: CameraModel,
    positions: np.ndarray,
    triangles: np.ndarray,
    binding: KeypointBinding,
) -> dict[str, KeypointView]:
    """Project bound keypoints and test the 2-ring visibility rule.

    A keypoint is visible when any vertex of its stored neighborhood (the
    bound vertex plus its 2-ring) passes the per-vertex raycast test. Bound
    vertices behind the camera come back invisible and flagged rather than
    raising, so one bad label cannot sink a whole frame.
    """
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    tris = np.ascontiguousarray(triangles, dtype=np.int64)
    query = np.unique(np.concatenate([binding.neighborhoods[k] for k in binding.labels()]))
    sub_vis = _raycast_visible_subset(camera, pos, tris, query)
    pix, depth, in_front = project_points(camera, pos)
    framed = _in_frame(camera, pix, in_front)

    out: dict[str, KeypointView] = {}
    for label in binding.labels():
        vid = binding.vertex_ids[label]
        if not in_front[vid]:
            out[label] = KeypointView(pixel=None, depth=None, visible=False, behind_camera=True)
            continue
        members = binding.neighborhoods[label]
        seen = bool(np.any(sub_vis[members] & framed[members]))
        out[label] = KeypointView(
            pixel=(float(pix[vid, 0]), float(pix[vid, 1])),
            depth=float(depth[vid]),
            visible=seen,
        )
    return out


def _raycast_visible_subset(camera, positions, triangles, vertex_ids) -> np.ndarray:
    """Raycast only the requested vertices; returns a full-size bool array."""
    query = np.ascontiguousarray(vertex_ids, dtype=np.int64)
    vis = _raycast_visible_against(
        camera.origin,
        positions[query],
        query,
        positions,
        triangles,
        DEPTH_EPSILON,
        SURFACE_EPSILON,
        _BARY_EPSILON,
    )
    full = np.zeros(len(positions), dtype=bool)
    full[query] = vis
    return full


@numba.njit(cache=True)
def _raycast_visible_against(
    origin, targets, target_ids, positions, triangles, near_eps, surface_eps, bary_eps
):
    """Segment tests camera->target against all triangles (Moller-Trumbore).

    Triangles incident to the queried vertex id never occlude it; a hit
    counts only when closer to the camera than the target by more than
    surface_eps, so pressed cloth layers do not hide the points they touch.
    """
    n = targets.shape[0]
    m = triangles.shape[0]
    out = np.ones(n, dtype=np.bool_)
    for k in range(n):
        v = target_ids[k]
        dx = targets[k, 0] - origin[0]
        dy = targets[k, 1] - origin[1]
        dz = targets[k, 2] - origin[2]
        seg = np.sqrt(dx * dx + dy * dy + dz * dz)
        if seg < 1e-12:
            continue
        inv = 1.0 / seg
        dxn, dyn, dzn = dx * inv, dy * inv, dz * inv
        limit = seg - surface_eps
        for t in range(m):
            a, b, c = triangles[t, 0], triangles[t, 1], triangles[t, 2]
            if a == v or b == v or c == v:
                continue
            e1x = positions[b, 0] - positions[a, 0]
            e1y = positions[b, 1] - positions[a, 1]
            e1z = positions[b, 2] - positions[a, 2]
            e2x = positions[c, 0] - positions[a, 0]
            e2y = positions[c, 1] - positions[a, 1]
            e2z = positions[c, 2] - positions[a, 2]
            px = dyn * e2z - dzn * e2y
            py = dzn * e2x - dxn * e2z
            pz = dxn * e2y - dyn * e2x
            det = e1x * px + e1y * py + e1z * pz
            if -1e-14 < det < 1e-14:
                continue
            inv_det = 1.0 / det
            sx = origin[0] - positions[a, 0]
            sy = origin[1] - positions[a, 1]
            sz = origin[2] - positions[a, 2]
            u = (sx * px + sy * py + sz * pz) * inv_det
            if u < -bary_eps or u > 1.0 + bary_eps:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            w = (dxn * qx + dyn * qy + dzn * qz) * inv_det
            if w < -bary_eps or u + w > 1.0 + bary_eps:
                continue
            dist = (e2x * qx + e2y * qy + e2z * qz) * inv_det
            if near_eps < dist < limit:
                out[k] = False
                break
    return out


@numba.njit(cache=True)
def _rasterize_kernel(pix, depth, tris, width, height, buf, ids):
    for t in range(tris.shape[0]):
        a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
        if depth[a] <= 0.0 or depth[b] <= 0.0 or depth[c] <= 0.0:
            continue
        ax, ay = pix[a, 0], pix[a, 1]
        bx, by = pix[b, 0], pix[b, 1]
        cx, cy = pix[c, 0], pix[c, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        inv_area = 1.0 / area
        # inverse depth interpolates linearly in screen space
        za, zb, zc = 1.0 / depth[a], 1.0 / depth[b], 1.0 / depth[c]
        lo_x = int(max(0.0, np.floor(min(ax, bx, cx) - 0.5)))
        hi_x = int(min(width - 1.0, np.ceil(max(ax, bx, cx) - 0.5)))
        lo_y = int(max(0.0, np.floor(min(ay, by, cy) - 0.5)))
        hi_y = int(min(height - 1.0, np.ceil(max(ay, by, cy) - 0.5)))
        for iy in range(lo_y, hi_y + 1):
            sy = iy + 0.5
            for ix in range(lo_x, hi_x + 1):
                sx = ix + 0.5
                w0 = ((bx - ax) * (sy - ay) - (by - ay) * (sx - ax)) * inv_area
                w1 = ((cx - bx) * (sy - by) - (cy - by) * (sx - bx)) * inv_area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                inv_z = w1 * za + w2 * zb + w0 * zc
                if inv_z <= 0.0:
                    continue
                z = 1.0 / inv_z
                if z < buf[iy, ix]:
                    buf[iy, ix] = z
                    ids[iy, ix] = t


def rasterize_depth(camera: CameraModel, positions: np.ndarray, triangles: np.ndarray) -> DepthImage:
    """Z-buffered depth of the mesh; both triangle windings are drawn."""
    buf = np.full((camera.height, camera.width), np.inf)
    ids = np.full((camera.height, camera.width), -1, dtype=np.int32)
    if len(triangles):
        pix, depth, _ = project_points(camera, np.ascontiguousarray(positions, dtype=np.float64))
        pix = np.nan_to_num(pix, nan=-1e9)
        _rasterize_kernel(
            np.ascontiguousarray(pix),
            np.ascontiguousarray(depth),
            np.ascontiguousarray(triangles, dtype=np.int64),
            camera.width,
            camera.height,
            buf,
            ids,
        )
    return DepthImage(width=camera.width, height=camera.height, depth=buf, triangle_ids=ids)


def scale_camera(camera: CameraModel, factor: int) -> CameraModel:
    """Same rays, finer pixel grid: intrinsics and size scaled together."""
    return dataclasses.replace(
        camera,
        width=camera.width * factor,
        height=camera.height * factor,
        fx=camera.fx * factor,
        fy=camera.fy * factor,
        cx=camera.cx * factor,
        cy=camera.cy * factor,
    )


def visible_by_zbuffer(
    camera: CameraModel,
    positions: np.ndarray,
    triangles: np.ndarray,
    depth_image: DepthImage | None = None,
    supersample: int = 4,
    depth_bias: float = SURFACE_EPSILON,
) -> np.ndarray:
    """Vertex visibility by depth comparison against a rasterized buffer.

    A vertex is seen when its depth is within depth_bias of the buffer value
    at its pixel. The buffer is rasterized at `supersample` times the camera
    resolution: the comparison error from surface slant shrinks with the
    pixel size, while the separation between stacked cloth layers does not,
    so a fixed millimeter bias becomes trustworthy once pixels are fine
    enough. At native 640x480 the depth ramp across one oblique pixel rivals
    the layer gap and no bias can split the two.

    The default bias is SURFACE_EPSILON itself: this test and the raycast
    then ask the same question, "is anything more than one pressed-surface
    gap in front of this point", one sampling at the pixel center and one
    along the exact ray. Away from coverage boundaries the answers can only
    differ for gaps within a sub-pixel slant of the shared threshold.

    Passing an explicit depth_image skips the internal rasterization and
    compares at that image's own resolution.
    """
    if depth_image is None:
        render_cam = scale_camera(camera, supersample) if supersample > 1 else camera
        depth_image = rasterize_depth(render_cam, positions, triangles)
    else:
        render_cam = camera
    pix, dep, in_front = project_points(render_cam, positions)
    buf = depth_image.depth
    h, w = buf.shape
    out = np.zeros(len(positions), dtype=bool)
    ok = in_front.copy()
    ok[in_front] = np.isfinite(pix[in_front]).all(axis=1)
    ix = np.zeros(len(positions), dtype=np.int64)
    iy = np.zeros(len(positions), dtype=np.int64)
    ix[ok] = np.floor(pix[ok, 0]).astype(np.int64)
    iy[ok] = np.floor(pix[ok, 1]).astype(np.int64)
    ok &= (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    sel = np.flatnonzero(ok)
    out[sel] = dep[sel] <= buf[iy[sel], ix[sel]] + depth_bias
    return out


def depth_to_png(depth_image: DepthImage, path) -> None:
    """Write a 16-bit grayscale PNG; depth in millimeters, background 0."""
    from PIL import Image

    mm = np.where(
        np.isfinite(depth_image.depth),
        np.clip(np.round(depth_image.depth * 1000.0), 1.0, 65535.0),
        0.0,
    ).astype(np.uint16)
    Image.fromarray(mm, mode="I;16").save(path)


def png_to_depth(path) -> DepthImage:
    """Inverse of depth_to_png (zero pixels decode to +inf background)."""
    from PIL import Image

    mm = np.asarray(Image.open(path), dtype=np.float64)
    depth = np.where(mm > 0, mm / 1000.0, np.inf)
    return DepthImage(width=depth.shape[1], height=depth.shape[0], depth=depth)
