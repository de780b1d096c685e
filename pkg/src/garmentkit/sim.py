"""Position-based cloth dynamics.

Solver layout per step: integrate gravity and drag into predicted
positions, then run a fixed number of constraint iterations (stretch, bend,
vertex-vertex self-collision, attachments, ground), then recover velocities
from the position delta. Stiffness is iteration-corrected with
k' = 1 - (1 - k)^(1/iterations) so behaviour is stable across iteration
counts. Within each constraint family corrections accumulate Jacobi-style
and are normalized by the per-vertex constraint count.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy.spatial import cKDTree

from .errors import NumericalDivergence
from .mesh import TriMesh, k_ring
from .seeding import rng_from_seed

# Ground tangential damping scale; per-step factor is 1 - friction * rate * dt.
_FRICTION_RATE = 30.0
# Self-collision contact radius floor, as a fraction of target edge length.
_CONTACT_EDGE_FRACTION = 0.30
# Strain limiting: edges are clamped back into +-_STRAIN_LIMIT after the main
# iterations. Friction never holds internal tension past this band, which is
# what keeps settled states within the 3% strain bound.
_STRAIN_LIMIT = 0.025
_STRAIN_SWEEPS = 12
# Per-iteration under-relaxation of the self-collision push-out.
_REPULSION_RELAX = 0.35
_CLOTH_FRICTION_SCALE = 0.5


@dataclass
class SimParams:
    """Material and solver parameters. Stiffnesses live in [0, 1]."""

    stretch_stiffness: float = 1.0
    bend_stiffness: float = 0.3
    friction: float = 0.5
    drag: float = 0.1
    thickness: float = 0.003
    gravity: float = 9.81
    dt: float = 1.0 / 240.0
    solver_iterations: int = 20
    damping: float = 0.02

    def validate(self) -> None:
        if not 0.0 <= self.stretch_stiffness <= 1.0:
            raise ValueError("stretch_stiffness must be in [0, 1]")
        if not 0.0 <= self.bend_stiffness <= 1.0:
            raise ValueError("bend_stiffness must be in [0, 1]")
        if not 0.0 <= self.friction <= 1.0:
            raise ValueError("friction must be in [0, 1]")
        if self.drag < 0.0:
            raise ValueError("drag must be non-negative")
        if self.thickness <= 0.0:
            raise ValueError("thickness must be positive")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.solver_iterations < 1:
            raise ValueError("solver_iterations must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must be in [0, 1)")


def sample_physics(seed: int, ranges: dict | None = None, base: SimParams | None = None) -> SimParams:
    """Draw per-sample material values; solver settings come from `base`."""
    if ranges is None:
        from .config import default_config

        ranges = default_config().physics.model_dump()
    elif hasattr(ranges, "model_dump"):
        ranges = ranges.model_dump()
    rng = rng_from_seed(seed)
    base = base or SimParams()
    out = replace(
        base,
        stretch_stiffness=float(rng.uniform(*ranges["stretch_stiffness"])),
        bend_stiffness=float(rng.uniform(*ranges["bend_stiffness"])),
        friction=float(rng.uniform(*ranges["friction"])),
        drag=float(rng.uniform(*ranges["drag"])),
    )
    out.validate()
    return out


@dataclass
class SimState:
    """Cloth state between solver steps.

    attachments maps vertex id -> kinematic world target; attached vertices
    have infinite mass for every constraint.
    """

    positions: np.ndarray
    velocities: np.ndarray
    attachments: dict[int, np.ndarray] = field(default_factory=dict)
    ground_height: float = 0.0

    def copy(self) -> "SimState":
        return SimState(
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            attachments={k: v.copy() for k, v in self.attachments.items()},
            ground_height=self.ground_height,
        )


@dataclass
class SettleResult:
    state: SimState
    converged: bool
    steps: int


def rest_state(mesh: TriMesh, ground_height: float = 0.0) -> SimState:
    """Flat rest pose lying on the ground plane."""
    pos = mesh.rest_positions.copy()
    pos[:, 2] = ground_height
    return SimState(
        positions=pos,
        velocities=np.zeros_like(pos),
        attachments={},
        ground_height=ground_height,
    )


class _ClothModel:
    """Per-mesh precomputation shared by all steps."""

    def __init__(self, mesh: TriMesh):
        self.edges = mesh.edges.astype(np.int64)
        self.rest_len = mesh.edge_rest_lengths.copy()
        self.triangles = mesh.triangles.astype(np.int64)
        self.bend = mesh.bending_pairs.astype(np.int64)
        d = mesh.rest_positions[self.bend[:, 0]] - mesh.rest_positions[self.bend[:, 1]]
        self.bend_rest = np.linalg.norm(d, axis=1)
        n = mesh.num_vertices
        self.n = n
        self.contact_radius_floor = _CONTACT_EDGE_FRACTION * mesh.target_edge
        # vertex pairs within graph distance 2 never self-collide
        excl = set()
        rings: list[np.ndarray] = []
        for v in range(n):
            ring = np.asarray(sorted({v} | {int(u) for u in k_ring(mesh, v, 2)}), dtype=np.int64)
            rings.append(ring)
            for u in ring:
                if v < u:
                    excl.add(v * n + int(u))
        self.excluded = np.fromiter(sorted(excl), dtype=np.int64, count=len(excl))
        # same neighbourhoods in CSR form for the face-contact scan
        self.ring_start = np.zeros(n + 1, dtype=np.int64)
        self.ring_start[1:] = np.cumsum([len(r) for r in rings])
        self.ring_vals = np.concatenate(rings)


_MODELS: "weakref.WeakKeyDictionary[TriMesh, _ClothModel]" = weakref.WeakKeyDictionary()


def _model(mesh: TriMesh) -> _ClothModel:
    model = _MODELS.get(mesh)
    if model is None:
        model = _ClothModel(mesh)
        _MODELS[mesh] = model
    return model


@numba.njit(cache=True)
def _distance_iteration(p, invm, idx, rest, k):
    """One Gauss-Seidel sweep of distance constraints; updates p in place."""
    for e in range(idx.shape[0]):
        i, j = idx[e, 0], idx[e, 1]
        w = invm[i] + invm[j]
        if w <= 0.0:
            continue
        dx = p[i, 0] - p[j, 0]
        dy = p[i, 1] - p[j, 1]
        dz = p[i, 2] - p[j, 2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        if dist < 1e-12:
            dist = 1e-12
        s = k * (dist - rest[e]) / (w * dist)
        cx, cy, cz = s * dx, s * dy, s * dz
        p[i, 0] -= invm[i] * cx
        p[i, 1] -= invm[i] * cy
        p[i, 2] -= invm[i] * cz
        p[j, 0] += invm[j] * cx
        p[j, 1] += invm[j] * cy
        p[j, 2] += invm[j] * cz


@numba.njit(cache=True)
def _repulsion_iteration(p, invm, pairs, radius, relax):
    """One Gauss-Seidel sweep of vertex-vertex repulsion; updates p in place.

    `relax` under-relaxes the push-out so contact resolves over the iteration
    loop instead of snapping pairs to the radius in one go; a full-strength
    projection overpowers the strain clamp in stacked-layer regions.
    """
    for c in range(pairs.shape[0]):
        i, j = pairs[c, 0], pairs[c, 1]
        w = invm[i] + invm[j]
        if w <= 0.0:
            continue
        dx = p[i, 0] - p[j, 0]
        dy = p[i, 1] - p[j, 1]
        dz = p[i, 2] - p[j, 2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        if dist >= radius:
            continue
        if dist < 1e-9:
            dist = 1e-9
        s = relax * (radius - dist) / (w * dist)
        cx, cy, cz = s * dx, s * dy, s * dz
        p[i, 0] += invm[i] * cx
        p[i, 1] += invm[i] * cy
        p[i, 2] += invm[i] * cz
        p[j, 0] -= invm[j] * cx
        p[j, 1] -= invm[j] * cy
        p[j, 2] -= invm[j] * cz


@numba.njit(cache=True)
def _face_candidates(p, tris, ring_start, ring_vals, radius):
    """Collect (vertex, triangle) contact candidates from the step-start state.

    Returns parallel arrays (cand_v, cand_t, side) where side is +1 when the
    vertex starts above the triangle plane and -1 below. Latching the side at
    step start is what stops two approaching layers from slipping through one
    another: point-pair repulsion alone loses all vertical push once layers
    become coplanar on the ground, and the stack collapses to zero thickness.

    Triangles within graph distance 2 of the vertex are excluded, mirroring
    the point-pair rule, and the projection must land on the (inflated) face.
    A uniform grid over inflated triangle boxes keeps the scan local; cells
    hold triangles in index order, so candidate order is deterministic.
    """
    m = tris.shape[0]
    search = 2.0 * radius
    cell = 4.0 * radius
    minx, miny, minz = p[0, 0], p[0, 1], p[0, 2]
    maxx, maxy, maxz = minx, miny, minz
    for v in range(p.shape[0]):
        if p[v, 0] < minx:
            minx = p[v, 0]
        elif p[v, 0] > maxx:
            maxx = p[v, 0]
        if p[v, 1] < miny:
            miny = p[v, 1]
        elif p[v, 1] > maxy:
            maxy = p[v, 1]
        if p[v, 2] < minz:
            minz = p[v, 2]
        elif p[v, 2] > maxz:
            maxz = p[v, 2]
    nx = int((maxx - minx) / cell) + 1
    ny = int((maxy - miny) / cell) + 1
    nz = int((maxz - minz) / cell) + 1
    ncells = nx * ny * nz

    counts = np.zeros(ncells + 1, dtype=np.int64)
    lo = np.empty((m, 3), dtype=np.int64)
    hi = np.empty((m, 3), dtype=np.int64)
    for t in range(m):
        ia, ib, ic = tris[t, 0], tris[t, 1], tris[t, 2]
        for ax in range(3):
            a = p[ia, ax]
            b = p[ib, ax]
            c = p[ic, ax]
            tmin = min(a, min(b, c)) - search
            tmax = max(a, max(b, c)) + search
            org = minx if ax == 0 else (miny if ax == 1 else minz)
            dim = nx if ax == 0 else (ny if ax == 1 else nz)
            i0 = int((tmin - org) / cell)
            i1 = int((tmax - org) / cell)
            if i0 < 0:
                i0 = 0
            if i1 > dim - 1:
                i1 = dim - 1
            lo[t, ax] = i0
            hi[t, ax] = i1
        for gx in range(lo[t, 0], hi[t, 0] + 1):
            for gy in range(lo[t, 1], hi[t, 1] + 1):
                for gz in range(lo[t, 2], hi[t, 2] + 1):
                    counts[gx * ny * nz + gy * nz + gz + 1] += 1
    for c in range(ncells):
        counts[c + 1] += counts[c]
    bucket = np.empty(counts[ncells], dtype=np.int64)
    cursor = counts[:ncells].copy()
    for t in range(m):
        for gx in range(lo[t, 0], hi[t, 0] + 1):
            for gy in range(lo[t, 1], hi[t, 1] + 1):
                for gz in range(lo[t, 2], hi[t, 2] + 1):
                    lin = gx * ny * nz + gy * nz + gz
                    bucket[cursor[lin]] = t
                    cursor[lin] += 1

    cap = 16
    out_v = np.empty(p.shape[0] * cap, dtype=np.int64)
    out_t = np.empty(p.shape[0] * cap, dtype=np.int64)
    out_s = np.empty(p.shape[0] * cap, dtype=np.float64)
    cnt = 0
    stamp = np.full(p.shape[0], -1, dtype=np.int64)
    for v in range(p.shape[0]):
        for r in range(ring_start[v], ring_start[v + 1]):
            stamp[ring_vals[r]] = v
        gx = int((p[v, 0] - minx) / cell)
        gy = int((p[v, 1] - miny) / cell)
        gz = int((p[v, 2] - minz) / cell)
        if gx < 0:
            gx = 0
        elif gx > nx - 1:
            gx = nx - 1
        if gy < 0:
            gy = 0
        elif gy > ny - 1:
            gy = ny - 1
        if gz < 0:
            gz = 0
        elif gz > nz - 1:
            gz = nz - 1
        lin = gx * ny * nz + gy * nz + gz
        taken = 0
        for k in range(counts[lin], counts[lin + 1]):
            t = bucket[k]
            ia, ib, ic = tris[t, 0], tris[t, 1], tris[t, 2]
            if stamp[ia] == v or stamp[ib] == v or stamp[ic] == v:
                continue
            e1x = p[ib, 0] - p[ia, 0]
            e1y = p[ib, 1] - p[ia, 1]
            e1z = p[ib, 2] - p[ia, 2]
            e2x = p[ic, 0] - p[ia, 0]
            e2y = p[ic, 1] - p[ia, 1]
            e2z = p[ic, 2] - p[ia, 2]
            nxv = e1y * e2z - e1z * e2y
            nyv = e1z * e2x - e1x * e2z
            nzv = e1x * e2y - e1y * e2x
            nn = np.sqrt(nxv * nxv + nyv * nyv + nzv * nzv)
            if nn < 1e-14:
                continue
            rx = p[v, 0] - p[ia, 0]
            ry = p[v, 1] - p[ia, 1]
            rz = p[v, 2] - p[ia, 2]
            d = (rx * nxv + ry * nyv + rz * nzv) / nn
            if d > search or d < -search:
                continue
            d11 = e1x * e1x + e1y * e1y + e1z * e1z
            d12 = e1x * e2x + e1y * e2y + e1z * e2z
            d22 = e2x * e2x + e2y * e2y + e2z * e2z
            den = d11 * d22 - d12 * d12
            if den < 1e-18:
                continue
            r1 = rx * e1x + ry * e1y + rz * e1z
            r2 = rx * e2x + ry * e2y + rz * e2z
            bu = (d22 * r1 - d12 * r2) / den
            bw = (d11 * r2 - d12 * r1) / den
            if bu < -0.25 or bw < -0.25 or bu + bw > 1.25:
                continue
            out_v[cnt] = v
            out_t[cnt] = t
            out_s[cnt] = 1.0 if d >= 0.0 else -1.0
            cnt += 1
            taken += 1
            if taken == cap:
                break
    return out_v[:cnt].copy(), out_t[:cnt].copy(), out_s[:cnt].copy()


@numba.njit(cache=True)
def _face_repulsion_iteration(p, invm, tris, cand_v, cand_t, side, radius, relax):
    """One Gauss-Seidel sweep of vertex-face clearance; updates p in place.

    Each candidate keeps its vertex at least `radius` away from the triangle
    plane on the side it started the step, as long as its projection still
    lands on the (slightly inflated) face. The correction is shared with the
    triangle corners by barycentric weight.
    """
    for k in range(cand_v.shape[0]):
        v = cand_v[k]
        t = cand_t[k]
        s0 = side[k]
        ia, ib, ic = tris[t, 0], tris[t, 1], tris[t, 2]
        e1x = p[ib, 0] - p[ia, 0]
        e1y = p[ib, 1] - p[ia, 1]
        e1z = p[ib, 2] - p[ia, 2]
        e2x = p[ic, 0] - p[ia, 0]
        e2y = p[ic, 1] - p[ia, 1]
        e2z = p[ic, 2] - p[ia, 2]
        nx = e1y * e2z - e1z * e2y
        ny = e1z * e2x - e1x * e2z
        nz = e1x * e2y - e1y * e2x
        nn = np.sqrt(nx * nx + ny * ny + nz * nz)
        if nn < 1e-14:
            continue
        nx /= nn
        ny /= nn
        nz /= nn
        rx = p[v, 0] - p[ia, 0]
        ry = p[v, 1] - p[ia, 1]
        rz = p[v, 2] - p[ia, 2]
        d = rx * nx + ry * ny + rz * nz
        if s0 * d >= radius:
            continue
        d11 = e1x * e1x + e1y * e1y + e1z * e1z
        d12 = e1x * e2x + e1y * e2y + e1z * e2z
        d22 = e2x * e2x + e2y * e2y + e2z * e2z
        den = d11 * d22 - d12 * d12
        if den < 1e-18:
            continue
        r1 = rx * e1x + ry * e1y + rz * e1z
        r2 = rx * e2x + ry * e2y + rz * e2z
        bu = (d22 * r1 - d12 * r2) / den
        bw = (d11 * r2 - d12 * r1) / den
        if bu < -0.25 or bw < -0.25 or bu + bw > 1.25:
            continue
        b0 = 1.0 - bu - bw
        if b0 < 0.0:
            b0 = 0.0
        b1 = bu if bu > 0.0 else 0.0
        b2 = bw if bw > 0.0 else 0.0
        bs = b0 + b1 + b2
        b0 /= bs
        b1 /= bs
        b2 /= bs
        wsum = (
            invm[v]
            + invm[ia] * b0 * b0
            + invm[ib] * b1 * b1
            + invm[ic] * b2 * b2
        )
        if wsum <= 0.0:
            continue
        lam = relax * (radius - s0 * d) / wsum
        px = lam * s0 * nx
        py = lam * s0 * ny
        pz = lam * s0 * nz
        p[v, 0] += invm[v] * px
        p[v, 1] += invm[v] * py
        p[v, 2] += invm[v] * pz
        p[ia, 0] -= invm[ia] * b0 * px
        p[ia, 1] -= invm[ia] * b0 * py
        p[ia, 2] -= invm[ia] * b0 * pz
        p[ib, 0] -= invm[ib] * b1 * px
        p[ib, 1] -= invm[ib] * b1 * py
        p[ib, 2] -= invm[ib] * b1 * pz
        p[ic, 0] -= invm[ic] * b2 * px
        p[ic, 1] -= invm[ic] * b2 * py
        p[ic, 2] -= invm[ic] * b2 * pz


@numba.njit(cache=True)
def _strain_limit_iteration(p, invm, idx, rest, limit):
    """Clamp edges whose strain magnitude exceeds `limit` back to the band.

    Returns the number of edges that needed a correction.
    """
    corrected = 0
    for e in range(idx.shape[0]):
        i, j = idx[e, 0], idx[e, 1]
        w = invm[i] + invm[j]
        if w <= 0.0:
            continue
        dx = p[i, 0] - p[j, 0]
        dy = p[i, 1] - p[j, 1]
        dz = p[i, 2] - p[j, 2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        if dist < 1e-12:
            dist = 1e-12
        lo = rest[e] * (1.0 - limit)
        hi = rest[e] * (1.0 + limit)
        if dist > hi:
            target = hi
        elif dist < lo:
            target = lo
        else:
            continue
        corrected += 1
        s = (dist - target) / (w * dist)
        cx, cy, cz = s * dx, s * dy, s * dz
        p[i, 0] -= invm[i] * cx
        p[i, 1] -= invm[i] * cy
        p[i, 2] -= invm[i] * cz
        p[j, 0] += invm[j] * cx
        p[j, 1] += invm[j] * cy
        p[j, 2] += invm[j] * cz
    return corrected


@numba.njit(cache=True)
def _solve_iterations(
    p,
    p_prev,
    invm,
    edges,
    edge_rest,
    k_stretch,
    bend,
    bend_rest,
    k_bend,
    pairs,
    tris,
    cand_v,
    cand_t,
    cand_side,
    radius,
    relax,
    att_ids,
    att_targets,
    ground,
    friction_it,
    iters,
):
    """All constraint iterations of one step, sequential for determinism.

    Ground contact applies position-level tangential friction: constraint
    projections cannot freely drag vertices that rest on the ground.
    """
    n = p.shape[0]
    contact_band = ground + 0.5 * radius
    # cloth-on-cloth contacts take the same tangential position friction as
    # ground contacts; without it a landed fold layer slides freely over the
    # layer below while its billow deflates, smearing the placement
    cloth_contact = np.zeros(n, dtype=np.bool_)
    for k in range(cand_v.shape[0]):
        cloth_contact[cand_v[k]] = True
        cloth_contact[tris[cand_t[k], 0]] = True
        cloth_contact[tris[cand_t[k], 1]] = True
        cloth_contact[tris[cand_t[k], 2]] = True
    for it in range(iters):
        _distance_iteration(p, invm, edges, edge_rest, k_stretch)
        if bend.shape[0] > 0:
            _distance_iteration(p, invm, bend, bend_rest, k_bend)
        if pairs.shape[0] > 0:
            _repulsion_iteration(p, invm, pairs, radius, relax)
        if cand_v.shape[0] > 0:
            _face_repulsion_iteration(p, invm, tris, cand_v, cand_t, cand_side, radius, relax)
        for a in range(att_ids.shape[0]):
            v = att_ids[a]
            p[v, 0] = att_targets[a, 0]
            p[v, 1] = att_targets[a, 1]
            p[v, 2] = att_targets[a, 2]
        for v in range(n):
            if p[v, 2] < ground:
                p[v, 2] = ground
            if invm[v] > 0.0:
                if p[v, 2] <= contact_band:
                    f = friction_it
                elif cloth_contact[v]:
                    # weaker than ground contact: a pressed fold still needs
                    # to creep flat as its trapped billow relaxes
                    f = _CLOTH_FRICTION_SCALE * friction_it
                else:
                    continue
                p[v, 0] -= f * (p[v, 0] - p_prev[v, 0])
                p[v, 1] -= f * (p[v, 1] - p_prev[v, 1])
        # Strain limiting closes each iteration: friction and repulsion must
        # never accumulate a pin on edges beyond the band, otherwise folded
        # multi-layer regions equilibrate well outside the 3% strain bound.
        _strain_limit_iteration(p, invm, edges, edge_rest, _STRAIN_LIMIT)
    # Closing phase: alternate strain clamping with the hard constraints
    # until a clean sweep, so the step ends inside the band.
    for _ in range(_STRAIN_SWEEPS):
        corrected = _strain_limit_iteration(p, invm, edges, edge_rest, _STRAIN_LIMIT)
        for a in range(att_ids.shape[0]):
            v = att_ids[a]
            p[v, 0] = att_targets[a, 0]
            p[v, 1] = att_targets[a, 1]
            p[v, 2] = att_targets[a, 2]
        for v in range(n):
            if p[v, 2] < ground:
                p[v, 2] = ground
        if corrected == 0:
            break


@numba.njit(cache=True)
def _strain_finish(p, invm, edges, edge_rest, limit, att_ids, att_targets, ground, max_sweeps):
    """Project a settled state into the strain band; returns sweeps used.

    Feasibility polish for the end of settling: dynamics stop re-violating
    once stepping ends, so alternating clamp sweeps with the hard constraints
    converges to a clean sweep.
    """
    for s in range(max_sweeps):
        corrected = _strain_limit_iteration(p, invm, edges, edge_rest, limit)
        for a in range(att_ids.shape[0]):
            v = att_ids[a]
            p[v, 0] = att_targets[a, 0]
            p[v, 1] = att_targets[a, 1]
            p[v, 2] = att_targets[a, 2]
        for v in range(p.shape[0]):
            if p[v, 2] < ground:
                p[v, 2] = ground
        if corrected == 0:
            return s + 1
    return max_sweeps


def _distance_pass_reference(
    p: np.ndarray, invm: np.ndarray, idx: np.ndarray, rest: np.ndarray, k: float
) -> None:
    """Pure-Python twin of _distance_iteration, kept for equivalence tests."""
    import math

    for e in range(idx.shape[0]):
        i, j = int(idx[e, 0]), int(idx[e, 1])
        w = invm[i] + invm[j]
        if w <= 0.0:
            continue
        dx = p[i, 0] - p[j, 0]
        dy = p[i, 1] - p[j, 1]
        dz = p[i, 2] - p[j, 2]
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dist < 1e-12:
            dist = 1e-12
        s = k * (dist - rest[e]) / (w * dist)
        cx, cy, cz = s * dx, s * dy, s * dz
        p[i, 0] -= invm[i] * cx
        p[i, 1] -= invm[i] * cy
        p[i, 2] -= invm[i] * cz
        p[j, 0] += invm[j] * cx
        p[j, 1] += invm[j] * cy
        p[j, 2] += invm[j] * cz


def _collision_pairs(p: np.ndarray, radius: float, model: _ClothModel) -> np.ndarray:
    tree = cKDTree(p)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return pairs.astype(np.int64).reshape(0, 2)
    pairs = np.sort(pairs.astype(np.int64), axis=1)
    keys = pairs[:, 0] * model.n + pairs[:, 1]
    keep = ~np.isin(keys, model.excluded)
    pairs = pairs[keep]
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def step(state: SimState, mesh: TriMesh, params: SimParams) -> SimState:
    """Advance one solver step of params.dt seconds."""
    model = _model(mesh)
    dt = params.dt
    p0 = state.positions
    v = state.velocities.copy()
    v[:, 2] -= params.gravity * dt
    v *= max(0.0, 1.0 - params.drag * dt)
    p = p0 + v * dt

    invm = np.ones(model.n)
    if state.attachments:
        att_ids = np.fromiter(sorted(state.attachments), dtype=np.int64)
        att_targets = np.stack(
            [np.asarray(state.attachments[int(i)], dtype=np.float64) for i in att_ids]
        )
        invm[att_ids] = 0.0
        p[att_ids] = att_targets
    else:
        att_ids = np.empty(0, dtype=np.int64)
        att_targets = np.empty((0, 3), dtype=np.float64)

    radius = max(params.thickness, model.contact_radius_floor)
    pairs = _collision_pairs(p, radius, model)
    cand_v, cand_t, cand_side = _face_candidates(
        p0, model.triangles, model.ring_start, model.ring_vals, radius
    )

    iters = params.solver_iterations
    ks = 1.0 - (1.0 - params.stretch_stiffness) ** (1.0 / iters)
    kb = 1.0 - (1.0 - params.bend_stiffness) ** (1.0 / iters)
    friction_it = 1.0 - (1.0 - min(params.friction, 0.999)) ** (1.0 / iters)
    ground = state.ground_height

    _solve_iterations(
        p,
        p0,
        invm,
        model.edges,
        model.rest_len,
        ks,
        model.bend,
        model.bend_rest,
        kb,
        pairs,
        model.triangles,
        cand_v,
        cand_t,
        cand_side,
        radius,
        _REPULSION_RELAX,
        att_ids,
        att_targets,
        ground,
        friction_it,
        iters,
    )

    v_new = (p - p0) / dt
    v_new *= 1.0 - params.damping
    # friction damps tangential velocity for ground contacts and for cloth
    # layers resting on each other (any vertex in an active repulsion pair)
    contact = p[:, 2] <= ground + max(1e-4, 0.25 * radius)
    if len(pairs):
        contact[pairs.reshape(-1)] = True
    if len(cand_v):
        contact[cand_v] = True
        contact[model.triangles[cand_t].reshape(-1)] = True
    factor = max(0.0, 1.0 - params.friction * _FRICTION_RATE * dt)
    v_new[contact, :2] *= factor

    if not (np.isfinite(p).all() and np.isfinite(v_new).all()):
        raise NumericalDivergence("solver produced non-finite state")
    return SimState(
        positions=p,
        velocities=v_new,
        attachments=state.attachments,
        ground_height=ground,
    )


def _strain_limit_pass_reference(
    p: np.ndarray, invm: np.ndarray, idx: np.ndarray, rest: np.ndarray, limit: float
) -> None:
    """Pure-Python twin of _strain_limit_iteration, kept for equivalence tests."""
    import math

    for e in range(idx.shape[0]):
        i, j = int(idx[e, 0]), int(idx[e, 1])
        w = invm[i] + invm[j]
        if w <= 0.0:
            continue
        dx = p[i, 0] - p[j, 0]
        dy = p[i, 1] - p[j, 1]
        dz = p[i, 2] - p[j, 2]
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dist < 1e-12:
            dist = 1e-12
        lo = rest[e] * (1.0 - limit)
        hi = rest[e] * (1.0 + limit)
        if dist > hi:
            target = hi
        elif dist < lo:
            target = lo
        else:
            continue
        s = (dist - target) / (w * dist)
        cx, cy, cz = s * dx, s * dy, s * dz
        p[i, 0] -= invm[i] * cx
        p[i, 1] -= invm[i] * cy
        p[i, 2] -= invm[i] * cz
        p[j, 0] += invm[j] * cx
        p[j, 1] += invm[j] * cy
        p[j, 2] += invm[j] * cz


def _repulsion_pass_reference(
    p: np.ndarray, invm: np.ndarray, pairs: np.ndarray, radius: float, relax: float
) -> None:
    """Pure-Python twin of _repulsion_iteration, kept for equivalence tests."""
    import math

    for c in range(pairs.shape[0]):
        i, j = int(pairs[c, 0]), int(pairs[c, 1])
        w = invm[i] + invm[j]
        if w <= 0.0:
            continue
        dx = p[i, 0] - p[j, 0]
        dy = p[i, 1] - p[j, 1]
        dz = p[i, 2] - p[j, 2]
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dist >= radius:
            continue
        if dist < 1e-9:
            dist = 1e-9
        s = relax * (radius - dist) / (w * dist)
        cx, cy, cz = s * dx, s * dy, s * dz
        p[i, 0] += invm[i] * cx
        p[i, 1] += invm[i] * cy
        p[i, 2] += invm[i] * cz
        p[j, 0] -= invm[j] * cx
        p[j, 1] -= invm[j] * cy
        p[j, 2] -= invm[j] * cz


def _face_repulsion_pass_reference(
    p: np.ndarray,
    invm: np.ndarray,
    tris: np.ndarray,
    cand_v: np.ndarray,
    cand_t: np.ndarray,
    side: np.ndarray,
    radius: float,
    relax: float,
) -> None:
    """Pure-Python twin of _face_repulsion_iteration, kept for equivalence tests."""
    import math

    for k in range(cand_v.shape[0]):
        v, t, s0 = int(cand_v[k]), int(cand_t[k]), float(side[k])
        ia, ib, ic = (int(x) for x in tris[t])
        e1 = [p[ib, a] - p[ia, a] for a in range(3)]
        e2 = [p[ic, a] - p[ia, a] for a in range(3)]
        nv = [
            e1[1] * e2[2] - e1[2] * e2[1],
            e1[2] * e2[0] - e1[0] * e2[2],
            e1[0] * e2[1] - e1[1] * e2[0],
        ]
        nn = math.sqrt(nv[0] ** 2 + nv[1] ** 2 + nv[2] ** 2)
        if nn < 1e-14:
            continue
        nv = [x / nn for x in nv]
        r = [p[v, a] - p[ia, a] for a in range(3)]
        d = r[0] * nv[0] + r[1] * nv[1] + r[2] * nv[2]
        if s0 * d >= radius:
            continue
        d11 = sum(x * x for x in e1)
        d12 = sum(x * y for x, y in zip(e1, e2))
        d22 = sum(x * x for x in e2)
        den = d11 * d22 - d12 * d12
        if den < 1e-18:
            continue
        r1 = sum(x * y for x, y in zip(r, e1))
        r2 = sum(x * y for x, y in zip(r, e2))
        bu = (d22 * r1 - d12 * r2) / den
        bw = (d11 * r2 - d12 * r1) / den
        if bu < -0.25 or bw < -0.25 or bu + bw > 1.25:
            continue
        b = [max(1.0 - bu - bw, 0.0), max(bu, 0.0), max(bw, 0.0)]
        bs = b[0] + b[1] + b[2]
        b = [x / bs for x in b]
        wsum = invm[v]
        for c, bb in zip((ia, ib, ic), b):
            wsum += invm[c] * bb * bb
        if wsum <= 0.0:
            continue
        lam = relax * (radius - s0 * d) / wsum
        push = [lam * s0 * x for x in nv]
        for a in range(3):
            p[v, a] += invm[v] * push[a]
        for c, bb in zip((ia, ib, ic), b):
            for a in range(3):
                p[c, a] -= invm[c] * bb * push[a]


def settle(
    state: SimState,
    mesh: TriMesh,
    params: SimParams,
    max_steps: int = 600,
    velocity_epsilon: float = 0.01,
    quiet_steps: int = 3,
) -> SettleResult:
    """Step until mean vertex speed stays below velocity_epsilon (m/s).

    The mean is the convergence measure on purpose: contact projection keeps
    a handful of sandwiched vertices jittering at the millimeter scale
    indefinitely, so a max-speed test never fires on folded states.
    """
    current = state
    quiet = 0
    converged = False
    steps = max_steps
    for n in range(1, max_steps + 1):
        current = step(current, mesh, params)
        mean_speed = float(np.linalg.norm(current.velocities, axis=1).mean())
        quiet = quiet + 1 if mean_speed < velocity_epsilon else 0
        if quiet >= quiet_steps:
            converged = True
            steps = n
            break
    _finish_strain(current, mesh)
    return SettleResult(state=current, converged=converged, steps=steps)


def _finish_strain(state: SimState, mesh: TriMesh) -> None:
    """Project state.positions into the strain band in place.

    Stacked-layer contact keeps a handful of edges a little outside the band
    while stepping; once stepping stops nothing re-violates them, so this
    converges and settled states come out within the bound.
    """
    model = _model(mesh)
    if state.attachments:
        att_ids = np.fromiter(sorted(state.attachments), dtype=np.int64)
        att_targets = np.stack(
            [np.asarray(state.attachments[int(i)], dtype=np.float64) for i in att_ids]
        )
    else:
        att_ids = np.empty(0, dtype=np.int64)
        att_targets = np.empty((0, 3), dtype=np.float64)
    invm = np.ones(model.n)
    if len(att_ids):
        invm[att_ids] = 0.0
    _strain_finish(
        state.positions,
        invm,
        model.edges,
        model.rest_len,
        _STRAIN_LIMIT,
        att_ids,
        att_targets,
        state.ground_height,
        400,
    )


def edge_strain(state: SimState, mesh: TriMesh) -> np.ndarray:
    """Per-edge |len/rest - 1|."""
    d = state.positions[mesh.edges[:, 0]] - state.positions[mesh.edges[:, 1]]
    return np.abs(np.linalg.norm(d, axis=1) / mesh.edge_rest_lengths - 1.0)


def total_energy(state: SimState, mesh: TriMesh, params: SimParams) -> float:
    """Unit-mass energy proxy: gravity + kinetic + stretch elastic."""
    z = state.positions[:, 2] - state.ground_height
    grav = params.gravity * float(z.sum())
    kin = 0.5 * float((state.velocities ** 2).sum())
    d = state.positions[mesh.edges[:, 0]] - state.positions[mesh.edges[:, 1]]
    c = np.linalg.norm(d, axis=1) - mesh.edge_rest_lengths
    elastic = 0.5 * params.stretch_stiffness * float((c ** 2).sum())
    return grav + kin + elastic
