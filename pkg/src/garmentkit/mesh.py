"""Triangulated garment meshes.

The mesher samples the outline densely (so boundary edges already respect
the target edge length), fills the interior with a jittered hexagonal
lattice, Delaunay-triangulates, then keeps triangles whose centroids lie
inside the outline. Structural guarantees (boundary conformity, disk
topology, max edge length) are verified explicitly; midpoint refinement and
lattice shrinking retries handle the rare miss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import shapely
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay, QhullError

from .curves import BoundaryCurve
from .errors import AnchorOutOfMesh, TriangulationFailure

# Over-length tolerance on triangle edges relative to target_edge.
EDGE_SLACK = 1.1

_LATTICE_JITTER_SEED = 0x6A77E2
_MAX_LATTICE_RETRIES = 6


@dataclass(eq=False)
class TriMesh:
    """Immutable triangle mesh; vertices carry rest positions and UVs.

    The first `boundary_count` vertices trace the outline in order.
    """

    vertices: np.ndarray        # (V, 3) float64, rest embedding (z = 0)
    triangles: np.ndarray       # (T, 3) int32, ccw in the rest plane
    uv: np.ndarray              # (V, 2) in [0, 1]^2
    rest_positions: np.ndarray  # (V, 3), equals vertices at build time
    target_edge: float
    boundary_count: int

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.uv, self.rest_positions):
            arr.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (lo, hi) pairs, (E, 2) int32."""
        t = self.triangles
        raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)
        raw = np.sort(raw, axis=1)
        edges = np.unique(raw, axis=0)
        edges.setflags(write=False)
        return edges

    @cached_property
    def edge_rest_lengths(self) -> np.ndarray:
        d = self.rest_positions[self.edges[:, 0]] - self.rest_positions[self.edges[:, 1]]
        out = np.linalg.norm(d, axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def _adjacency(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR arrays (indptr, indices) of the vertex graph."""
        e = self.edges
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.argsort(src, kind="stable")
        src, dst = src[order], dst[order]
        indptr = np.zeros(self.num_vertices + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, dst

    def neighbors(self, vertex_id: int) -> np.ndarray:
        indptr, indices = self._adjacency
        return indices[indptr[vertex_id]:indptr[vertex_id + 1]]

    @cached_property
    def vertex_triangles(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR arrays (indptr, tri_ids): triangles incident to each vertex."""
        t = self.triangles
        vid = t.reshape(-1)
        tid = np.repeat(np.arange(self.num_triangles, dtype=np.int64), 3)
        order = np.argsort(vid, kind="stable")
        vid, tid = vid[order], tid[order]
        indptr = np.zeros(self.num_vertices + 1, dtype=np.int64)
        np.add.at(indptr, vid + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, tid

    def incident_triangles(self, vertex_id: int) -> np.ndarray:
        indptr, tids = self.vertex_triangles
        return tids[indptr[vertex_id]:indptr[vertex_id + 1]]

    @cached_property
    def bending_pairs(self) -> np.ndarray:
        """(M, 2) opposite-vertex pairs across each interior edge."""
        t = self.triangles
        pairs: dict[tuple[int, int], list[int]] = {}
        for tri in t:
            a, b, c = int(tri[0]), int(tri[1]), int(tri[2])
            for i, j, opp in ((a, b, c), (b, c, a), (c, a, b)):
                key = (i, j) if i < j else (j, i)
                pairs.setdefault(key, []).append(opp)
        out = [opps for opps in pairs.values() if len(opps) == 2]
        arr = np.array(sorted(out), dtype=np.int32) if out else np.empty((0, 2), dtype=np.int32)
        arr.setflags(write=False)
        return arr


def k_ring(mesh: TriMesh, vertex_id: int, k: int) -> np.ndarray:
    """Vertex ids at graph distance 1..k from vertex_id (seed excluded).

    Returns a sorted int array; empty for k = 0.
    """
    if not 0 <= vertex_id < mesh.num_vertices:
        raise IndexError(f"vertex id {vertex_id} out of range")
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    seen = {int(vertex_id)}
    frontier = {int(vertex_id)}
    for _ in range(k):
        nxt = set()
        for v in frontier:
            nxt.update(int(u) for u in mesh.neighbors(v))
        frontier = nxt - seen
        seen |= frontier
    seen.discard(int(vertex_id))
    return np.array(sorted(seen), dtype=np.int64)


@dataclass
class KeypointBinding:
    """Semantic labels bound to mesh vertices.

    vertex_ids: label -> vertex id.
    neighborhoods: label -> sorted id array of the bound vertex plus its
        2-ring; visibility checks any member.
    """

    vertex_ids: dict[str, int]
    neighborhoods: dict[str, np.ndarray] = field(default_factory=dict)

    def labels(self) -> tuple[str, ...]:
        return tuple(self.vertex_ids)


def bind_keypoints(mesh: TriMesh, anchors: dict[str, np.ndarray]) -> KeypointBinding:
    """Bind each anchor to its nearest rest vertex.

    Anchors are rest-plane (x, y) points. Ties break to the lowest vertex
    id; an anchor farther than target_edge from every vertex raises
    AnchorOutOfMesh.
    """
    xy = mesh.rest_positions[:, :2]
    vertex_ids: dict[str, int] = {}
    neighborhoods: dict[str, np.ndarray] = {}
    for label, anchor in anchors.items():
        a = np.asarray(anchor, dtype=np.float64).reshape(2)
        d = np.linalg.norm(xy - a, axis=1)
        vid = int(np.argmin(d))
        if d[vid] > mesh.target_edge:
            raise AnchorOutOfMesh(
                f"anchor {label} is {d[vid]:.4f} m from the nearest vertex"
            )
        vertex_ids[label] = vid
        ring = k_ring(mesh, vid, 2)
        neighborhoods[label] = np.unique(np.append(ring, vid))
    return KeypointBinding(vertex_ids=vertex_ids, neighborhoods=neighborhoods)


def _hex_lattice(polygon: shapely.Polygon, spacing: float) -> np.ndarray:
    """Jittered hexagonal lattice points strictly inside the outline."""
    minx, miny, maxx, maxy = polygon.bounds
    row_h = spacing * math.sqrt(3.0) / 2.0
    ys = np.arange(miny + 0.5 * row_h, maxy, row_h)
    pts = []
    for r, y in enumerate(ys):
        off = 0.25 * spacing if r % 2 == 0 else -0.25 * spacing
        xs = np.arange(minx + 0.5 * spacing + off, maxx, spacing)
        pts.append(np.stack([xs, np.full_like(xs, y)], axis=1))
    if not pts:
        return np.empty((0, 2), dtype=np.float64)
    cand = np.concatenate(pts, axis=0)
    # tiny deterministic jitter breaks cocircular lattice quadruples
    rng = np.random.default_rng(_LATTICE_JITTER_SEED)
    cand = cand + rng.uniform(-1e-4, 1e-4, size=cand.shape) * spacing
    eroded = polygon.buffer(-0.5 * spacing)
    if eroded.is_empty:
        return np.empty((0, 2), dtype=np.float64)
    keep = shapely.contains_xy(eroded, cand[:, 0], cand[:, 1])
    return cand[keep]


def _edge_keys(pairs: np.ndarray, n: int) -> np.ndarray:
    lo = np.minimum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    hi = np.maximum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    return lo * n + hi


def _verify_structure(
    pts: np.ndarray,
    t: np.ndarray,
    boundary_count: int,
    target_edge: float | None = None,
) -> None:
    """Raise TriangulationFailure unless (pts, t) is a conforming disk.

    Checks: manifold edges, kept-region border equals the outline ring,
    every vertex referenced, single component, positive triangle areas, and
    (when target_edge is given) the max edge bound.
    """
    if len(t) == 0:
        raise TriangulationFailure("no triangles inside the outline")
    n = len(pts)
    all_pairs = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)
    keys = _edge_keys(all_pairs, n)
    uniq, counts = np.unique(keys, return_counts=True)
    if counts.max() > 2:
        raise TriangulationFailure("non-manifold edge")

    b = boundary_count
    ring = np.stack([np.arange(b), (np.arange(b) + 1) % b], axis=1)
    ring_keys = _edge_keys(ring, n)
    border_keys = uniq[counts == 1]
    if not np.array_equal(np.sort(ring_keys), np.sort(border_keys)):
        raise TriangulationFailure("kept region boundary does not match the outline")

    if len(np.unique(t)) != n:
        raise TriangulationFailure("unreferenced vertices after classification")

    edges = np.stack([uniq // n, uniq % n], axis=1)
    graph = csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    n_comp, _ = connected_components(graph, directed=False)
    if n_comp != 1:
        raise TriangulationFailure("mesh is not connected")

    a, bb, c = pts[t[:, 0]], pts[t[:, 1]], pts[t[:, 2]]
    area2 = np.abs(
        (bb[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (bb[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    )
    if float(area2.min()) < 1e-12:
        raise TriangulationFailure("degenerate sliver triangle")

    if target_edge is not None:
        lengths = np.linalg.norm(pts[edges[:, 0]] - pts[edges[:, 1]], axis=1)
        if float(lengths.max()) > EDGE_SLACK * target_edge:
            raise TriangulationFailure("edge bound not reached")


def _classify(pts: np.ndarray, polygon: shapely.Polygon) -> np.ndarray:
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise TriangulationFailure(f"Delaunay failed: {exc}") from exc
    simplices = tri.simplices.astype(np.int32)
    centroids = pts[simplices].mean(axis=1)
    keep = shapely.contains_xy(polygon, centroids[:, 0], centroids[:, 1])
    return simplices[keep]


def _tri_edges(t: tuple[int, int, int]):
    a, b, c = t
    yield (a, b) if a < b else (b, a)
    yield (b, c) if b < c else (c, b)
    yield (a, c) if a < c else (c, a)


def _split_long_edges(
    pts: np.ndarray, triangles: np.ndarray, target_edge: float
) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint-split interior edges longer than the bound.

    A 2-4 local split never touches boundary edges (those are sampled below
    target_edge) and each new opposite edge is at most the mean of two
    existing ones, so the pass terminates with all edges in bound.
    """
    from collections import defaultdict, deque

    max_len = EDGE_SLACK * target_edge
    pts_list = [p for p in pts]
    tris: dict[int, tuple[int, int, int]] = {
        i: (int(t[0]), int(t[1]), int(t[2])) for i, t in enumerate(triangles)
    }
    next_tid = len(tris)
    edge_tris: dict[tuple[int, int], set[int]] = defaultdict(set)
    for tid, t in tris.items():
        for e in _tri_edges(t):
            edge_tris[e].add(tid)

    def elen(e):
        return float(np.linalg.norm(pts_list[e[0]] - pts_list[e[1]]))

    queue = deque(sorted(e for e in edge_tris if elen(e) > max_len))
    guard = 20 * len(queue) + 200
    splits = 0
    while queue:
        e = queue.popleft()
        tids = edge_tris.get(e)
        if not tids or elen(e) <= max_len:
            continue
        if len(tids) != 2:
            raise TriangulationFailure("over-long edge on the mesh border")
        splits += 1
        if splits > guard:
            raise TriangulationFailure("edge refinement did not converge")
        i, j = e
        m = len(pts_list)
        pts_list.append((pts_list[i] + pts_list[j]) / 2.0)
        new_edges = set()
        for tid in sorted(tids):
            a, b, c = tris.pop(tid)
            for old in _tri_edges((a, b, c)):
                edge_tris[old].discard(tid)
            # rotate so the split edge occupies the first two slots
            for _ in range(3):
                if {a, b} == {i, j}:
                    break
                a, b, c = b, c, a
            for nt in ((a, m, c), (m, b, c)):
                tris[next_tid] = nt
                for ne in _tri_edges(nt):
                    edge_tris[ne].add(next_tid)
                    new_edges.add(ne)
                next_tid += 1
        for ne in sorted(new_edges):
            if elen(ne) > max_len:
                queue.append(ne)

    out_tris = np.array([tris[k] for k in sorted(tris)], dtype=np.int32)
    return np.array(pts_list), out_tris


def triangulate_boundary(
    boundary: BoundaryCurve,
    target_edge: float = 0.01,
    curve_tolerance: float = 0.002,
) -> TriMesh:
    """Mesh the interior of a closed outline.

    Guarantees on success: every sampled boundary edge is a mesh edge, the
    mesh is a single connected manifold disk, all triangles wind ccw, and
    no edge exceeds EDGE_SLACK * target_edge.
    """
    if target_edge <= 0.0:
        raise TriangulationFailure("target_edge must be positive")
    bpts = boundary.sample_polyline(target_edge, curve_tolerance)
    polygon = shapely.Polygon(bpts)
    if not polygon.is_valid or polygon.area <= 0.0:
        raise TriangulationFailure("sampled outline is not a simple polygon")

    spacing = 0.92 * target_edge
    last_error: Exception | None = None
    for _ in range(_MAX_LATTICE_RETRIES):
        interior = _hex_lattice(polygon, spacing)
        pts = np.concatenate([bpts, interior], axis=0)
        try:
            triangles = _classify(pts, polygon)
            _verify_structure(pts, triangles, len(bpts))
            pts_r, tris_r = _split_long_edges(pts, triangles, target_edge)
            _verify_structure(pts_r, tris_r, len(bpts), target_edge)
            return _finalize(pts_r, tris_r, len(bpts), target_edge)
        except TriangulationFailure as exc:
            last_error = exc
            spacing *= 0.85
    raise TriangulationFailure(f"meshing failed after retries: {last_error}")


def _finalize(pts: np.ndarray, triangles: np.ndarray, boundary_count: int, target_edge: float) -> TriMesh:
    # enforce ccw winding in the rest plane
    a = pts[triangles[:, 0]]
    b = pts[triangles[:, 1]]
    c = pts[triangles[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = cross < 0.0
    triangles = triangles.copy()
    triangles[flip] = triangles[flip][:, ::-1]

    lo = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lo).max())
    uv = (pts - lo) / max(extent, 1e-12)

    vertices = np.concatenate([pts, np.zeros((len(pts), 1))], axis=1)
    return TriMesh(
        vertices=vertices,
        triangles=np.ascontiguousarray(triangles, dtype=np.int32),
        uv=np.ascontiguousarray(uv),
        rest_positions=vertices.copy(),
        target_edge=float(target_edge),
        boundary_count=int(boundary_count),
    )


def save_obj(path, mesh: TriMesh, positions: np.ndarray | None = None) -> None:
    """Write Wavefront OBJ with positions (deformed if given), UVs, faces."""
    pos = mesh.vertices if positions is None else np.asarray(positions, dtype=np.float64)
    if pos.shape != mesh.vertices.shape:
        raise ValueError("positions shape mismatch")
    lines = []
    for p in pos:
        lines.append(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}")
    for t in mesh.uv:
        lines.append(f"vt {t[0]:.17g} {t[1]:.17g}")
    for f in mesh.triangles + 1:
        lines.append(f"f {f[0]}/{f[0]} {f[1]}/{f[1]} {f[2]}/{f[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read positions, triangles, and UVs (None when absent) from an OBJ."""
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
                faces.append(idx)
    positions = np.array(verts, dtype=np.float64)
    triangles = np.array(faces, dtype=np.int32)
    uv = np.array(uvs, dtype=np.float64) if uvs else None
    return positions, triangles, uv
