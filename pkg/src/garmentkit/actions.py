"""Deformation actions: scripted manipulations applied to cloth states.

An action kinematically drives grasped vertices (each grasped vertex plus
its 1-ring rides along as an attachment) while the solver handles the rest
of the fabric, then releases and settles. apply_action returns keyframes:
the start state, one every keyframe_interval steps, the end of the motion,
and the settled post-action state last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAction, MissingLabel
from .mesh import KeypointBinding, TriMesh, k_ring
from .sim import SimParams, SimState, settle, step

TOWEL = "towel"
SHORTS = "shorts"
TSHIRT = "tshirt"


@dataclass
class Drop:
    """Rigidly re-pose the rest mesh above the ground and let it fall."""

    rotation: np.ndarray  # (3, 3) world rotation applied about the centroid
    height: float = 0.05  # gap between the lowest vertex and the ground


@dataclass
class GraspArc:
    """Carry grasped vertices along vertical-plane arcs to place targets.

    Each grasped vertex travels from its current position to its own place
    target; the arc apex sits max(arc_height, half the chord length) above
    the straight pick-place chord.
    """

    grasp_vertices: np.ndarray  # (G,) int
    place_targets: np.ndarray   # (G, 3)
    arc_height: float = 0.18
    duration: float = 1.0


@dataclass
class LiftRotate:
    """Lift grasped vertices and rotate them about their centroid's vertical axis."""

    grasp_vertices: np.ndarray
    lift_height: float = 0.15
    yaw: float = math.pi / 6.0
    duration: float = 1.0


DeformAction = Drop | GraspArc | LiftRotate


@dataclass(frozen=True)
class FoldPlan:
    """Keypoint-level fold: per-arm (pick_label, place_label)."""

    left: tuple[str, str] | None = None
    right: tuple[str, str] | None = None

    def arms(self) -> list[tuple[str, tuple[str, str]]]:
        out = []
        if self.left is not None:
            out.append(("LA", self.left))
        if self.right is not None:
            out.append(("RA", self.right))
        return out


# Two-stage fold routines per kind. Stage 2 picks land on the layer stacks
# stage 1 created, which is how a two-gripper rig folds flat garments.
FOLD_SEQUENCES: dict[str, list[FoldPlan]] = {
    TOWEL: [
        FoldPlan(left=("corner_tl", "corner_bl"), right=("corner_tr", "corner_br")),
        FoldPlan(left=("corner_tl", "corner_tr"), right=("corner_bl", "corner_br")),
    ],
    SHORTS: [
        FoldPlan(left=("waist_left", "waist_right"), right=("leg_outer_left", "leg_outer_right")),
        FoldPlan(left=("leg_outer_left", "waist_left"), right=("leg_outer_right", "waist_right")),
    ],
    TSHIRT: [
        FoldPlan(left=("shoulder_left", "shoulder_right"), right=("waist_left", "waist_right")),
        FoldPlan(left=("waist_left", "shoulder_left"), right=("waist_right", "shoulder_right")),
    ],
}


def plan_to_action(
    state: SimState,
    binding: KeypointBinding,
    plan: FoldPlan,
    arc_height: float = 0.0,
    duration: float = 1.0,
    place_clearance: float = 0.005,
) -> GraspArc:
    """Resolve a label-level plan against the current cloth state.

    Pick vertices and place targets are read from where the bound keypoints
    are NOW, so plans stay valid after earlier folds moved them.
    """
    grasp, targets = [], []
    for _, (pick, place) in plan.arms():
        for label in (pick, place):
            if label not in binding.vertex_ids:
                raise MissingLabel(f"label {label!r} not bound")
        pick_vid = binding.vertex_ids[pick]
        place_pos = state.positions[binding.vertex_ids[place]].copy()
        place_pos[2] += place_clearance
        if np.linalg.norm(place_pos - state.positions[pick_vid]) < 1e-6:
            raise DegenerateAction(f"pick {pick!r} already sits at place {place!r}")
        grasp.append(pick_vid)
        targets.append(place_pos)
    if not grasp:
        raise DegenerateAction("fold plan has no arms")
    return GraspArc(
        grasp_vertices=np.array(grasp, dtype=np.int64),
        place_targets=np.stack(targets),
        arc_height=arc_height,
        duration=duration,
    )


def _smoothstep(x: float) -> float:
    return x * x * (3.0 - 2.0 * x)


def _attachment_group(
    mesh: TriMesh, state: SimState, grasp_vertices: np.ndarray
) -> list[tuple[int, int, np.ndarray]]:
    """(vertex_id, anchor_index, offset_from_anchor) for grasps + 1-rings.

    A vertex claimed by several grasps follows the first in grasp order.
    """
    group: dict[int, tuple[int, np.ndarray]] = {}
    for a, vid in enumerate(grasp_vertices):
        vid = int(vid)
        if vid not in group:
            group[vid] = (a, np.zeros(3))
        for u in k_ring(mesh, vid, 1):
            u = int(u)
            if u not in group:
                group[u] = (a, state.positions[u] - state.positions[vid])
    return [(v, a, off) for v, (a, off) in group.items()]


# Seconds the grasp stays closed at the end of a motion before release;
# lets the fabric drape while held, which reduces placement snap-back.
_HOLD_TIME = 0.35
_APEX_RATIO = 0.35


def _run_motion(
    state: SimState,
    mesh: TriMesh,
    params: SimParams,
    targets_at,
    duration: float,
    keyframe_interval: int,
) -> tuple[list[SimState], SimState]:
    """Step the solver while attachments track targets_at(s), s in (0, 1]."""
    n_steps = max(1, math.ceil(duration / params.dt))
    hold_steps = math.ceil(_HOLD_TIME / params.dt)
    keyframes: list[SimState] = []
    current = state
    for i in range(1, n_steps + hold_steps + 1):
        s = _smoothstep(min(i, n_steps) / n_steps)
        current = SimState(
            positions=current.positions,
            velocities=current.velocities,
            attachments=targets_at(s),
            ground_height=current.ground_height,
        )
        current = step(current, mesh, params)
        if i % keyframe_interval == 0 and i < n_steps + hold_steps:
            keyframes.append(current.copy())
    return keyframes, current


def apply_action(
    state: SimState,
    mesh: TriMesh,
    params: SimParams,
    action: DeformAction,
    max_settle_steps: int = 600,
    velocity_epsilon: float = 0.01,
    keyframe_interval: int = 60,
) -> list[SimState]:
    """Run one action; returns keyframes ending at the settled state."""
    keyframes = [state.copy()]

    if isinstance(action, Drop):
        rot = np.asarray(action.rotation, dtype=np.float64).reshape(3, 3)
        if np.array_equal(rot, np.eye(3)):
            pos = mesh.rest_positions.copy()
        else:
            centroid = mesh.rest_positions.mean(axis=0)
            pos = (mesh.rest_positions - centroid) @ rot.T + centroid
        shift = state.ground_height + action.height - float(pos[:, 2].min())
        pos[:, 2] += shift
        dropped = SimState(
            positions=pos,
            velocities=np.zeros_like(pos),
            attachments={},
            ground_height=state.ground_height,
        )
        keyframes.append(dropped.copy())
        result = settle(dropped, mesh, params, max_settle_steps, velocity_epsilon)
        keyframes.append(result.state)
        return keyframes

    if isinstance(action, GraspArc):
        grasp = np.asarray(action.grasp_vertices, dtype=np.int64)
        places = np.asarray(action.place_targets, dtype=np.float64).reshape(len(grasp), 3)
        starts = state.positions[grasp].copy()
        chords = places - starts
        apex = np.maximum(action.arc_height, _APEX_RATIO * np.linalg.norm(chords, axis=1))
        group = _attachment_group(mesh, state, grasp)

        def targets_at(s: float) -> dict[int, np.ndarray]:
            anchor = starts + chords * s
            anchor[:, 2] += apex * math.sin(math.pi * s)
            return {v: anchor[a] + off for v, a, off in group}

        moved, current = _run_motion(
            state, mesh, params, targets_at, action.duration, keyframe_interval
        )
        keyframes.extend(moved)
        keyframes.append(current.copy())
        released = SimState(
            positions=current.positions,
            velocities=current.velocities,
            attachments={},
            ground_height=current.ground_height,
        )
        result = settle(released, mesh, params, max_settle_steps, velocity_epsilon)
        keyframes.append(result.state)
        return keyframes

    if isinstance(action, LiftRotate):
        grasp = np.asarray(action.grasp_vertices, dtype=np.int64)
        group = _attachment_group(mesh, state, grasp)
        centroid = state.positions[grasp].mean(axis=0)
        base = {v: state.positions[v].copy() for v, _, _ in group}

        def targets_at(s: float) -> dict[int, np.ndarray]:
            ang = action.yaw * s
            ca, sa = math.cos(ang), math.sin(ang)
            out = {}
            for v, _, _ in group:
                q = base[v] - centroid
                out[v] = np.array(
                    [
                        ca * q[0] - sa * q[1] + centroid[0],
                        sa * q[0] + ca * q[1] + centroid[1],
                        q[2] + centroid[2] + action.lift_height * s,
                    ]
                )
            return out

        moved, current = _run_motion(
            state, mesh, params, targets_at, action.duration, keyframe_interval
        )
        keyframes.extend(moved)
        keyframes.append(current.copy())
        released = SimState(
            positions=current.positions,
            velocities=current.velocities,
            attachments={},
            ground_height=current.ground_height,
        )
        result = settle(released, mesh, params, max_settle_steps, velocity_epsilon)
        keyframes.append(result.state)
        return keyframes

    raise TypeError(f"unknown action type {type(action).__name__}")
