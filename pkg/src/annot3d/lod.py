"""Level-of-detail generation for chunk meshes.

Decimation is quadric-error edge collapse applied in batched passes: each
pass ranks all candidate edges by collapse cost and applies the locally
minimal ones (edges that are the cheapest incident edge of both of their
endpoints) simultaneously, which keeps the whole pass vectorizable. The
tail end runs one collapse at a time so the face-count target is met
without ever emptying the mesh.

Every LOD carries a total source-face -> LOD-face mapping so a stroke
made against coarse geometry can be projected back onto full-resolution
faces. The mapping assigns each source face to the nearest LOD face whose
normal points the same way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .knn import SpatialIndex
from .mesh import TriangleMesh, face_centroids, face_normals


@dataclass(frozen=True)
class LodLevel:
    """One resolution of a chunk plus its provenance mapping.

    source_to_lod[j] = LOD face index that absorbed chunk-local source
    face j (identity for level 0).
    """

    mesh: TriangleMesh
    source_to_lod: np.ndarray

    def coverage(self) -> dict:
        """Inverse mapping: LOD face index -> list of chunk-local source faces."""
        out: dict = {}
        for src, lod_face in enumerate(self.source_to_lod):
            out.setdefault(int(lod_face), []).append(src)
        return out


def _vertex_quadrics(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Sum of face plane quadrics per vertex, shape (V,4,4)."""
    v0, v1, v2 = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = np.where(norm > 0, n / norm, 0.0)
    d = -np.einsum("ij,ij->i", n, v0)
    plane = np.column_stack([n, d])                      # (F,4)
    k_face = plane[:, :, None] * plane[:, None, :]       # (F,4,4)
    quadrics = np.zeros((len(vertices), 4, 4))
    for c in range(3):
        np.add.at(quadrics, faces[:, c], k_face)
    return quadrics


def _chunk_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [0, 2]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def _edge_costs(vertices, quadrics, edges):
    """Best collapse position among (u, v, midpoint) and its quadric cost."""
    q = quadrics[edges[:, 0]] + quadrics[edges[:, 1]]    # (E,4,4)
    pu = vertices[edges[:, 0]]
    pv = vertices[edges[:, 1]]
    cands = np.stack([pu, pv, (pu + pv) / 2.0], axis=1)  # (E,3,3)
    h = np.concatenate([cands, np.ones((len(edges), 3, 1))], axis=2)  # (E,3,4)
    costs = np.einsum("ecj,ejk,eck->ec", h, q, h)
    best = np.argmin(costs, axis=1)
    rows = np.arange(len(edges))
    return costs[rows, best], cands[rows, best]


class _Decimator:
    """Mutable collapse state over one chunk mesh."""

    def __init__(self, mesh: TriangleMesh):
        self.vertices = mesh.vertices.copy()
        self.faces = mesh.faces.copy()
        self.alive = np.ones(len(self.faces), dtype=bool)
        self.quadrics = _vertex_quadrics(self.vertices, self.faces)

    @property
    def face_count(self) -> int:
        return int(self.alive.sum())

    def _alive_faces(self) -> np.ndarray:
        return self.faces[self.alive]

    def _apply_collapses(self, edges: np.ndarray, targets: np.ndarray) -> None:
        keep = edges.min(axis=1)
        gone = edges.max(axis=1)
        self.vertices[keep] = targets
        self.quadrics[keep] += self.quadrics[gone]
        remap = np.arange(len(self.vertices))
        remap[gone] = keep
        self.faces = remap[self.faces]
        f = self.faces
        degen = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        self.alive &= ~degen

    def batch_pass(self, max_collapses: int) -> int:
        """One vectorized pass of locally-minimal collapses; returns the
        number of collapses applied."""
        faces = self._alive_faces()
        edges = _chunk_edges(faces)
        if len(edges) == 0:
            return 0
        costs, targets = _edge_costs(self.vertices, self.quadrics, edges)
        rank = np.lexsort((edges[:, 1], edges[:, 0], costs))
        inv_rank = np.empty(len(edges), dtype=np.int64)
        inv_rank[rank] = np.arange(len(edges))
        vmin = np.full(len(self.vertices), len(edges), dtype=np.int64)
        np.minimum.at(vmin, edges[:, 0], inv_rank)
        np.minimum.at(vmin, edges[:, 1], inv_rank)
        selected = (vmin[edges[:, 0]] == inv_rank) & (vmin[edges[:, 1]] == inv_rank)
        sel_idx = np.nonzero(selected)[0]
        if len(sel_idx) > max_collapses:
            sel_idx = sel_idx[np.argsort(inv_rank[sel_idx])[:max_collapses]]
        if len(sel_idx) == 0:
            return 0
        self._apply_collapses(edges[sel_idx], targets[sel_idx])
        return len(sel_idx)

    def sequential_pass(self, target: int) -> bool:
        """Apply the single cheapest collapse that keeps >= 1 face alive.
        Returns False when no such collapse exists."""
        faces = self._alive_faces()
        edges = _chunk_edges(faces)
        if len(edges) == 0:
            return False
        costs, targets = _edge_costs(self.vertices, self.quadrics, edges)
        order = np.lexsort((edges[:, 1], edges[:, 0], costs))
        global_faces = self.faces
        for i in order:
            u, v = edges[i]
            incident = ((global_faces == u) | (global_faces == v)).sum(axis=1) >= 2
            dead = int((self.alive & incident).sum())
            if self.face_count - dead >= 1:
                self._apply_collapses(edges[i : i + 1], targets[i : i + 1])
                return True
        return False

    def drop_faces_to(self, target: int) -> None:
        """Last resort for degenerate inputs: delete highest-id faces."""
        alive_idx = np.nonzero(self.alive)[0]
        excess = len(alive_idx) - max(target, 1)
        if excess > 0:
            self.alive[alive_idx[-excess:]] = False

    def compact(self, colors: Optional[np.ndarray]) -> TriangleMesh:
        faces = self._alive_faces()
        used, inverse = np.unique(faces, return_inverse=True)
        new_faces = inverse.reshape(-1, 3).astype(np.int64)
        new_colors = colors[used] if colors is not None else None
        return TriangleMesh(self.vertices[used], new_faces, new_colors)


def decimate(mesh: TriangleMesh, target_faces: int) -> TriangleMesh:
    """Collapse edges until the mesh has <= target_faces (and >= 1) faces."""
    target = max(int(target_faces), 1)
    if mesh.num_faces <= target:
        return mesh
    dec = _Decimator(mesh)
    while dec.face_count > target:
        remaining = dec.face_count - target
        if dec.face_count <= 64 or remaining <= 8:
            if not dec.sequential_pass(target):
                dec.drop_faces_to(target)
                break
        else:
            # Each collapse removes at least one face; cap the batch so a
            # pass cannot massively overshoot the target.
            if dec.batch_pass(max_collapses=remaining) == 0:
                dec.drop_faces_to(target)
                break
    return dec.compact(mesh.colors)


def map_source_faces(source: TriangleMesh, lod: TriangleMesh) -> np.ndarray:
    """source face -> nearest LOD face with a compatible (non-opposing)
    normal; plain nearest when none of the nearest candidates qualifies."""
    lod_centroids = face_centroids(lod)
    lod_normals = face_normals(lod)
    index = SpatialIndex(lod_centroids)
    k = min(8, lod.num_faces)
    neighbors = index.query(face_centroids(source), k=k)   # (S,k)
    src_normals = face_normals(source)
    dots = np.einsum("sj,skj->sk", src_normals, lod_normals[neighbors])
    compatible = dots > 0.0
    first = np.argmax(compatible, axis=1)
    none_ok = ~compatible.any(axis=1)
    first[none_ok] = 0
    return neighbors[np.arange(len(neighbors)), first]


def validate_ratios(ratios: Sequence[float]) -> Tuple[float, ...]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ValidationError("exactly three LOD ratios are required")
    if ratios[0] != 1.0:
        raise ValidationError("first LOD ratio must be 1.0")
    if not (ratios[0] > ratios[1] > ratios[2] > 0):
        raise ValidationError("LOD ratios must be strictly decreasing and positive")
    return ratios


def build_lods(mesh: TriangleMesh, ratios: Sequence[float] = (1.0, 0.3, 0.1)) -> List[LodLevel]:
    """The three LOD levels of one chunk mesh.

    Level k has at most ceil(ratio_k * F0) faces and at least one; level 0
    is the unmodified input.
    """
    ratios = validate_ratios(ratios)
    if mesh.num_faces < 1:
        raise ValidationError("cannot build LODs for an empty chunk")
    levels = [LodLevel(mesh, np.arange(mesh.num_faces, dtype=np.int64))]
    for ratio in ratios[1:]:
        target = int(np.ceil(ratio * mesh.num_faces))
        lod_mesh = decimate(mesh, target)
        levels.append(LodLevel(lod_mesh, map_source_faces(mesh, lod_mesh)))
    return levels
