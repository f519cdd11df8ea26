"""Shared mesh/scene builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from annot3d.mesh import TriangleMesh


def random_mesh(rng: np.random.Generator, num_faces: int, extent: float = 10.0,
                float32_grid: bool = True) -> TriangleMesh:
    """Random disconnected triangle soup; float32-valued coordinates so the
    mesh survives a float32 file round trip bitwise."""
    centers = rng.uniform(0, extent, size=(num_faces, 3))
    offsets = rng.normal(scale=0.3, size=(num_faces, 3, 3))
    vertices = (centers[:, None, :] + offsets).reshape(-1, 3)
    if float32_grid:
        vertices = vertices.astype(np.float32).astype(np.float64)
    faces = np.arange(num_faces * 3, dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(vertices, faces)


def unit_cube_mesh() -> TriangleMesh:
    """Closed unit cube as 12 triangles, total surface area 6."""
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64)
    # Each quad split into two triangles, outward winding not required here.
    quads = [
        (0, 1, 3, 2),  # x = 0
        (4, 6, 7, 5),  # x = 1
        (0, 4, 5, 1),  # y = 0
        (2, 3, 7, 6),  # y = 1
        (0, 2, 6, 4),  # z = 0
        (1, 5, 7, 3),  # z = 1
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return TriangleMesh(v, np.array(faces, dtype=np.int64))


def sphere_mesh(subdiv: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Icosphere by repeated midpoint subdivision."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts / np.linalg.norm(verts, axis=1, keepdims=True) * radius)
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = (verts[i] + verts[j]) / 2.0
            m = m / np.linalg.norm(m) * radius
            cache[key] = len(verts)
            verts.append(m)
        return cache[key]

    for _ in range(subdiv):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
