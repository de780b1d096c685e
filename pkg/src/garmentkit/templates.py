"""Parametric garment templates.

Each garment kind (towel, shorts, tshirt) is a flat 2D skeleton: a ring of
named corners joined by edges. Edges may bow outward as cubic Beziers and
corners may be rounded with tangent circular arcs. Semantic keypoints sit on
named corners; a rounded corner's anchor moves to its arc midpoint so it
always stays on the outline.

All lengths are meters, the rest plane is x right / y up, outlines wind
counter-clockwise and are centered near the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curves import ArcSegment, BoundaryCurve, CubicBezier, LineSegment
from .errors import DegenerateBoundary
from .seeding import rng_from_seed

TOWEL = "towel"
SHORTS = "shorts"
TSHIRT = "tshirt"
GARMENT_KINDS = (TOWEL, SHORTS, TSHIRT)

# Canonical label order per kind; answer serialization and binding follow it.
KEYPOINT_LABELS: dict[str, tuple[str, ...]] = {
    TOWEL: ("corner_tl", "corner_tr", "corner_bl", "corner_br"),
    SHORTS: (
        "waist_left",
        "waist_right",
        "leg_outer_left",
        "leg_outer_right",
        "leg_inner_left",
        "leg_inner_right",
    ),
    TSHIRT: (
        "neck_left",
        "neck_right",
        "shoulder_left",
        "shoulder_right",
        "sleeve_top_left",
        "sleeve_bottom_left",
        "sleeve_top_right",
        "sleeve_bottom_right",
        "armpit_left",
        "armpit_right",
        "waist_left",
        "waist_right",
    ),
}

_SKELETON_KEYS = {
    TOWEL: ("width", "height"),
    SHORTS: ("waist_width", "crotch_depth", "leg_length", "leg_opening"),
    TSHIRT: (
        "chest_width",
        "torso_length",
        "sleeve_length",
        "sleeve_width",
        "neck_width",
        "neck_depth",
    ),
}


@dataclass
class TemplateParams:
    """Resolved parameters of one garment instance.

    skeleton: named dimensions in meters (per-kind key set).
    bezier_offsets: per-edge control-point displacement, positive = outward.
    corner_radii: per-corner rounding radius, 0 = sharp.
    """

    kind: str
    skeleton: dict[str, float]
    bezier_offsets: dict[str, float] = field(default_factory=dict)
    corner_radii: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        """Reject parameter combinations that cannot form a sane outline."""
        if self.kind not in GARMENT_KINDS:
            raise DegenerateBoundary(f"unknown garment kind {self.kind!r}")
        missing = set(_SKELETON_KEYS[self.kind]) - set(self.skeleton)
        if missing:
            raise DegenerateBoundary(f"missing skeleton keys: {sorted(missing)}")
        for key in _SKELETON_KEYS[self.kind]:
            if not self.skeleton[key] > 0.0:
                raise DegenerateBoundary(f"skeleton {key} must be positive")
        s = self.skeleton
        if self.kind == SHORTS:
            if 2.0 * s["leg_opening"] >= 0.95 * s["waist_width"]:
                raise DegenerateBoundary("legs overlap: 2*leg_opening too close to waist_width")
        if self.kind == TSHIRT:
            if s["neck_width"] >= 0.85 * s["chest_width"]:
                raise DegenerateBoundary("neck too wide for chest")
            if s["sleeve_width"] >= 0.85 * s["torso_length"]:
                raise DegenerateBoundary("sleeve wider than torso is long")
            if s["neck_depth"] >= 0.45 * s["torso_length"]:
                raise DegenerateBoundary("neckline too deep")
        corners, edges = _skeleton_layout(self)
        n = len(corners)
        for i, c in enumerate(corners):
            r = self.corner_radii.get(c.name, 0.0)
            if r < 0.0:
                raise DegenerateBoundary(f"negative radius at {c.name}")
            if r == 0.0:
                continue
            len_in = float(np.linalg.norm(c.xy - corners[i - 1].xy))
            len_out = float(np.linalg.norm(corners[(i + 1) % n].xy - c.xy))
            if r > 0.5 * min(len_in, len_out):
                raise DegenerateBoundary(
                    f"radius at {c.name} exceeds half the shorter adjacent segment"
                )
        edge_names = {e.name for e in edges}
        for name in self.bezier_offsets:
            if name not in edge_names:
                raise DegenerateBoundary(f"unknown edge {name!r} in bezier_offsets")
        corner_names = {c.name for c in corners}
        for name in self.corner_radii:
            if name not in corner_names:
                raise DegenerateBoundary(f"unknown corner {name!r} in corner_radii")


@dataclass
class _Corner:
    name: str
    xy: np.ndarray


@dataclass
class _Edge:
    name: str
    neckline_depth: float | None = None


def _skeleton_layout(params: TemplateParams) -> tuple[list[_Corner], list[_Edge]]:
    """Corner ring + edge names for the kind, counter-clockwise."""
    s = params.skeleton
    C = lambda name, x, y: _Corner(name, np.array([x, y], dtype=np.float64))
    if params.kind == TOWEL:
        w, h = s["width"] / 2.0, s["height"] / 2.0
        corners = [
            C("corner_bl", -w, -h),
            C("corner_br", w, -h),
            C("corner_tr", w, h),
            C("corner_tl", -w, h),
        ]
        edges = [_Edge("bottom"), _Edge("right"), _Edge("top"), _Edge("left")]
        return corners, edges
    if params.kind == SHORTS:
        w = s["waist_width"] / 2.0
        total = s["crotch_depth"] + s["leg_length"]
        y_waist, y_hem = total / 2.0, -total / 2.0
        y_crotch = y_waist - s["crotch_depth"]
        o = s["leg_opening"]
        corners = [
            C("waist_left", -w, y_waist),
            C("leg_outer_left", -w, y_hem),
            C("leg_inner_left", -w + o, y_hem),
            C("crotch", 0.0, y_crotch),
            C("leg_inner_right", w - o, y_hem),
            C("leg_outer_right", w, y_hem),
            C("waist_right", w, y_waist),
        ]
        edges = [
            _Edge("side_left"),
            _Edge("hem_left"),
            _Edge("inseam_left"),
            _Edge("inseam_right"),
            _Edge("hem_right"),
            _Edge("side_right"),
            _Edge("waist"),
        ]
        return corners, edges
    if params.kind == TSHIRT:
        w = s["chest_width"] / 2.0
        y_sh, y_waist = s["torso_length"] / 2.0, -s["torso_length"] / 2.0
        y_arm = y_sh - s["sleeve_width"]
        xs = w + s["sleeve_length"]
        wn = s["neck_width"] / 2.0
        corners = [
            C("waist_left", -w, y_waist),
            C("waist_right", w, y_waist),
            C("armpit_right", w, y_arm),
            C("sleeve_bottom_right", xs, y_arm),
            C("sleeve_top_right", xs, y_sh),
            C("shoulder_right", w, y_sh),
            C("neck_right", wn, y_sh),
            C("neck_left", -wn, y_sh),
            C("shoulder_left", -w, y_sh),
            C("sleeve_top_left", -xs, y_sh),
            C("sleeve_bottom_left", -xs, y_arm),
            C("armpit_left", -w, y_arm),
        ]
        edges = [
            _Edge("hem"),
            _Edge("side_right"),
            _Edge("sleeve_under_right"),
            _Edge("sleeve_cap_right"),
            _Edge("sleeve_shoulder_right"),
            _Edge("shoulder_neck_right"),
            _Edge("neckline", neckline_depth=s["neck_depth"]),
            _Edge("shoulder_neck_left"),
            _Edge("sleeve_shoulder_left"),
            _Edge("sleeve_cap_left"),
            _Edge("sleeve_under_left"),
            _Edge("side_left"),
        ]
        return corners, edges
    raise DegenerateBoundary(f"unknown garment kind {params.kind!r}")


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise DegenerateBoundary("coincident skeleton corners")
    return v / n


def _build_outline(params: TemplateParams):
    """Assemble segments and anchors from the skeleton.

    Returns (segments, anchors) where anchors maps every corner name to its
    on-outline position (arc midpoint when rounded).
    """
    corners, edges = _skeleton_layout(params)
    n = len(corners)
    t_in = [c.xy.copy() for c in corners]
    t_out = [c.xy.copy() for c in corners]
    arcs: list[ArcSegment | None] = [None] * n
    anchors: dict[str, np.ndarray] = {}

    for i, c in enumerate(corners):
        d_in = _unit(c.xy - corners[i - 1].xy)
        d_out = _unit(corners[(i + 1) % n].xy - c.xy)
        turn = math.atan2(
            d_in[0] * d_out[1] - d_in[1] * d_out[0], float(np.dot(d_in, d_out))
        )
        r = float(params.corner_radii.get(c.name, 0.0))
        if r > 1e-9 and abs(turn) > 1e-6:
            trim = r * math.tan(abs(turn) / 2.0)
            t_in[i] = c.xy - d_in * trim
            t_out[i] = c.xy + d_out * trim
            left = np.array([-d_in[1], d_in[0]])
            center = t_in[i] + math.copysign(r, turn) * left
            a0 = math.atan2(t_in[i][1] - center[1], t_in[i][0] - center[0])
            arcs[i] = ArcSegment(center, r, a0, a0 + turn)
            anchors[c.name] = arcs[i].midpoint()
        else:
            anchors[c.name] = c.xy.copy()

    segments = []
    for i in range(n):
        j = (i + 1) % n
        start, end = t_out[i], t_in[j]
        edge = edges[i]
        chord = end - start
        direction = _unit(chord)
        if edge.neckline_depth is not None:
            # Inward normal is the left of travel for a ccw outline; the
            # cubic's midpoint reaches 3/4 of the control displacement.
            inward = np.array([-direction[1], direction[0]])
            disp = inward * (4.0 / 3.0) * edge.neckline_depth
            segments.append(
                CubicBezier(start, start + chord / 3.0 + disp, start + 2.0 * chord / 3.0 + disp, end)
            )
        else:
            bow = float(params.bezier_offsets.get(edge.name, 0.0))
            if abs(bow) > 1e-12:
                outward = np.array([direction[1], -direction[0]])
                disp = outward * bow
                segments.append(
                    CubicBezier(
                        start, start + chord / 3.0 + disp, start + 2.0 * chord / 3.0 + disp, end
                    )
                )
            else:
                segments.append(LineSegment(start, end))
        if arcs[j] is not None:
            segments.append(arcs[j])
    return segments, anchors


def boundary_curve(params: TemplateParams) -> BoundaryCurve:
    """Closed outline of the garment; raises DegenerateBoundary when unsound."""
    params.validate()
    segments, _ = _build_outline(params)
    return BoundaryCurve(segments)


def keypoint_anchors(params: TemplateParams) -> dict[str, np.ndarray]:
    """Semantic keypoint positions in the rest plane, canonical label order."""
    params.validate()
    _, anchors = _build_outline(params)
    return {label: anchors[label] for label in KEYPOINT_LABELS[params.kind]}


def _clamped_radius(r: float, len_in: float, len_out: float, turn: float) -> float:
    """Largest usable rounding radius at a corner, at most r."""
    if abs(turn) < 1e-6:
        return 0.0
    shorter = min(len_in, len_out)
    cap = min(0.45 * shorter / max(math.tan(abs(turn) / 2.0), 1e-9), 0.5 * shorter)
    return max(0.0, min(r, cap))


def _uniform(rng: np.random.Generator, bounds) -> float:
    lo, hi = float(bounds[0]), float(bounds[1])
    return float(rng.uniform(lo, hi))


def sample_template(kind: str, seed: int, ranges: dict | None = None) -> TemplateParams:
    """Draw one template, deterministic per (kind, seed).

    ranges maps parameter names to [lo, hi] bounds; defaults come from the
    packaged config. Left/right paired values are mirrored for shorts and
    tshirts. Sampled corner radii are clamped so tangent trims never consume
    an adjacent edge.
    """
    if kind not in GARMENT_KINDS:
        raise DegenerateBoundary(f"unknown garment kind {kind!r}")
    if ranges is None:
        from .config import default_config

        ranges = default_config().templates[kind]
    if hasattr(ranges, "model_dump"):
        ranges = ranges.model_dump()
    rng = rng_from_seed(seed)

    if kind == TOWEL:
        skeleton = {
            "width": _uniform(rng, ranges["width"]),
            "height": _uniform(rng, ranges["height"]),
        }
        bows = {name: _uniform(rng, ranges["edge_bow"]) for name in ("bottom", "right", "top", "left")}
        radii_raw = {
            name: _uniform(rng, ranges["corner_radius"])
            for name in ("corner_bl", "corner_br", "corner_tr", "corner_tl")
        }
    elif kind == SHORTS:
        waist = _uniform(rng, ranges["waist_width"])
        skeleton = {
            "waist_width": waist,
            "crotch_depth": _uniform(rng, ranges["crotch_depth"]),
            "leg_length": _uniform(rng, ranges["leg_length"]),
            "leg_opening": _uniform(rng, ranges["leg_opening_frac"]) * (waist / 2.0),
        }
        side_bow = _uniform(rng, ranges["edge_bow"])
        hem_bow = _uniform(rng, ranges["edge_bow"])
        waist_bow = _uniform(rng, ranges["edge_bow"])
        bows = {
            "side_left": side_bow,
            "side_right": side_bow,
            "hem_left": hem_bow,
            "hem_right": hem_bow,
            "waist": waist_bow,
        }
        waist_r = _uniform(rng, ranges["corner_radius"])
        outer_r = _uniform(rng, ranges["corner_radius"])
        inner_r = _uniform(rng, ranges["corner_radius"])
        radii_raw = {
            "waist_left": waist_r,
            "waist_right": waist_r,
            "leg_outer_left": outer_r,
            "leg_outer_right": outer_r,
            "leg_inner_left": inner_r,
            "leg_inner_right": inner_r,
            "crotch": _uniform(rng, ranges["crotch_radius"]),
        }
    else:
        chest = _uniform(rng, ranges["chest_width"])
        skeleton = {
            "chest_width": chest,
            "torso_length": _uniform(rng, ranges["torso_length"]),
            "sleeve_length": _uniform(rng, ranges["sleeve_length"]),
            "sleeve_width": _uniform(rng, ranges["sleeve_width"]),
            "neck_width": _uniform(rng, ranges["neck_width_frac"]) * chest,
            "neck_depth": _uniform(rng, ranges["neck_depth"]),
        }
        side_bow = _uniform(rng, ranges["edge_bow"])
        hem_bow = _uniform(rng, ranges["edge_bow"])
        cap_bow = _uniform(rng, ranges["edge_bow"]) * 0.5
        bows = {
            "side_left": side_bow,
            "side_right": side_bow,
            "hem": hem_bow,
            "sleeve_cap_left": cap_bow,
            "sleeve_cap_right": cap_bow,
        }
        waist_r = _uniform(rng, ranges["corner_radius"])
        sleeve_r = _uniform(rng, ranges["corner_radius"])
        armpit_r = _uniform(rng, ranges["armpit_radius"])
        radii_raw = {
            "waist_left": waist_r,
            "waist_right": waist_r,
            "sleeve_bottom_left": sleeve_r,
            "sleeve_bottom_right": sleeve_r,
            "sleeve_top_left": sleeve_r,
            "sleeve_top_right": sleeve_r,
            "armpit_left": armpit_r,
            "armpit_right": armpit_r,
        }

    params = TemplateParams(kind=kind, skeleton=skeleton, bezier_offsets=bows, corner_radii={})
    corners, _ = _skeleton_layout(params)
    n = len(corners)
    radii = {}
    for i, c in enumerate(corners):
        raw = radii_raw.get(c.name, 0.0)
        if raw <= 0.0:
            continue
        d_in = _unit(c.xy - corners[i - 1].xy)
        d_out = _unit(corners[(i + 1) % n].xy - c.xy)
        turn = math.atan2(d_in[0] * d_out[1] - d_in[1] * d_out[0], float(np.dot(d_in, d_out)))
        len_in = float(np.linalg.norm(c.xy - corners[i - 1].xy))
        len_out = float(np.linalg.norm(corners[(i + 1) % n].xy - c.xy))
        r = _clamped_radius(raw, len_in, len_out, turn)
        if r > 1e-6:
            radii[c.name] = r
    params.corner_radii = radii
    params.validate()
    # Surface parameter errors as boundary problems early; adversarial
    # ranges should fail here, not at meshing time.
    boundary_curve(params)
    return params
