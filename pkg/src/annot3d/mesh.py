"""Core scene geometry: triangle meshes and point clouds.

Coordinates are metric (meters) in a right-handed world frame, stored as
float64 internally (files downsample to float32 on write). Instances are
immutable after construction: the backing numpy arrays are marked
read-only so a scene can be shared across worker threads without copies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError


def _freeze(a: np.ndarray, dtype, shape_cols: int) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    if a.ndim != 2 or a.shape[1] != shape_cols:
        raise ValidationError(f"expected an (N,{shape_cols}) array, got shape {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh.

    vertices: (V,3) float64 positions, faces: (F,3) int64 vertex indices,
    colors: optional (V,3) uint8 per-vertex RGB.
    """

    vertices: np.ndarray
    faces: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", _freeze(self.vertices, np.float64, 3))
        object.__setattr__(self, "faces", _freeze(self.faces, np.int64, 3))
        if self.colors is not None:
            colors = _freeze(self.colors, np.uint8, 3)
            if len(colors) != len(self.vertices):
                raise ValidationError("per-vertex colors must match vertex count")
            object.__setattr__(self, "colors", colors)
        if not np.isfinite(self.vertices).all():
            raise ValidationError("mesh vertices contain non-finite coordinates")
        if len(self.faces) > 0:
            if len(self.vertices) == 0:
                raise ValidationError("mesh has faces but no vertices")
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValidationError("face index out of range")
            f = self.faces
            if ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])).any():
                raise ValidationError("degenerate face (repeated vertex index)")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def is_empty(self) -> bool:
        return len(self.faces) == 0


@dataclass(frozen=True)
class PointCloud:
    """points: (N,3) float64 positions, colors: optional (N,3) uint8 RGB."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "points", _freeze(self.points, np.float64, 3))
        if not np.isfinite(self.points).all():
            raise ValidationError("point cloud contains non-finite coordinates")
        if self.colors is not None:
            colors = _freeze(self.colors, np.uint8, 3)
            if len(colors) != len(self.points):
                raise ValidationError("per-point colors must match point count")
            object.__setattr__(self, "colors", colors)

    @property
    def num_points(self) -> int:
        return len(self.points)


def _check_face_id(mesh: TriangleMesh, face_id: int) -> None:
    if not 0 <= face_id < mesh.num_faces:
        raise ValidationError(f"face id {face_id} out of range [0, {mesh.num_faces})")


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    """Area of every face: 0.5 * |(v1-v0) x (v2-v0)|, shape (F,)."""
    v = mesh.vertices
    f = mesh.faces
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def face_area(mesh: TriangleMesh, face_id: int) -> float:
    """Area of one face in m^2; zero only for collinear vertices."""
    _check_face_id(mesh, face_id)
    v = mesh.vertices[mesh.faces[face_id]]
    return float(0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0])))


def face_centroids(mesh: TriangleMesh) -> np.ndarray:
    """Arithmetic mean of the three vertices of every face, shape (F,3)."""
    v = mesh.vertices
    f = mesh.faces
    return (v[f[:, 0]] + v[f[:, 1]] + v[f[:, 2]]) / 3.0


def face_centroid(mesh: TriangleMesh, face_id: int) -> np.ndarray:
    _check_face_id(mesh, face_id)
    return mesh.vertices[mesh.faces[face_id]].mean(axis=0)


def face_normals(mesh: TriangleMesh) -> np.ndarray:
    """Unit face normals, shape (F,3); zero vector for degenerate-area faces."""
    v = mesh.vertices
    f = mesh.faces
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(norm > 0, n / norm, 0.0)
    return unit
