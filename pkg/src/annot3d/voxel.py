"""Occupancy voxelization of point-cloud scenes.

Scenes that arrive as raw point clouds are turned into a uniform voxel
grid; a voxel counts as occupied when strictly more than min_points of
the cloud fall inside it. The occupied voxels are expanded into cube
geometry for the labeling session, and face labels painted on the cubes
are folded back into per-voxel labels afterwards.

Grid files: grid.json (origin, step, dims, threshold) plus occupied.csv
with one "linear_index,count" row per occupied voxel, sorted by index.
The linearization is x-major: linear = (i * dims[1] + j) * dims[2] + k.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import FormatError, MismatchError, ValidationError
from .labels import VOID_LABEL, LabelMap
from .mesh import PointCloud, TriangleMesh

_LINEARIZATION = "linear = (i * dims[1] + j) * dims[2] + k"


@dataclass(frozen=True)
class VoxelGrid:
    """Occupied cells of a uniform grid.

    indices holds the (i, j, k) cell coordinates of occupied voxels in
    lexicographic order (which equals linear-index order); counts holds
    the number of source points per occupied voxel. The voxel element id
    used by label maps is the row position within indices.
    """

    origin: np.ndarray
    step: float
    dims: np.ndarray
    indices: np.ndarray
    counts: np.ndarray
    min_points: int

    def __post_init__(self):
        origin = np.ascontiguousarray(np.asarray(self.origin, dtype=np.float64))
        dims = np.ascontiguousarray(np.asarray(self.dims, dtype=np.int64))
        idx = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int64).reshape(-1, 3))
        cnt = np.ascontiguousarray(np.asarray(self.counts, dtype=np.int64).reshape(-1))
        for arr in (origin, dims, idx, cnt):
            arr.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "counts", cnt)
        if origin.shape != (3,) or dims.shape != (3,):
            raise ValidationError("origin and dims must be 3-vectors")
        if not (self.step > 0):
            raise ValidationError("voxel step must be positive")
        if np.any(dims < 0):
            raise ValidationError("grid dims must be non-negative")
        if len(idx) != len(cnt):
            raise MismatchError("indices and counts disagree in length")
        if len(idx):
            if idx.min() < 0 or np.any(idx >= dims):
                raise ValidationError("occupied voxel outside grid dims")
            if np.any(cnt <= self.min_points):
                raise ValidationError(
                    f"occupied voxels must hold > {self.min_points} points")
            lin = self.linear_indices()
            if np.any(np.diff(lin) <= 0):
                raise ValidationError("occupied voxels must be sorted by linear index")

    @property
    def num_occupied(self) -> int:
        return len(self.indices)

    def linear_indices(self) -> np.ndarray:
        i, j, k = self.indices[:, 0], self.indices[:, 1], self.indices[:, 2]
        return (i * self.dims[1] + j) * self.dims[2] + k

    def voxel_centers(self) -> np.ndarray:
        return self.origin + (self.indices + 0.5) * self.step

    def cell_of_points(self, points: np.ndarray) -> np.ndarray:
        """Grid cell coordinates for arbitrary points (may lie outside)."""
        return np.floor((np.asarray(points, dtype=np.float64) - self.origin)
                        / self.step).astype(np.int64)


def voxelize(cloud, step: float, min_points: int = 5) -> VoxelGrid:
    """Bin a point cloud into a uniform grid.

    The grid origin snaps to the step lattice (floor of the cloud minimum)
    and a voxel is occupied only when strictly more than min_points points
    fall in it.
    """
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise ValidationError("voxelize needs a non-empty (N,3) point set")
    if not (step > 0):
        raise ValidationError("voxel step must be positive")
    origin = np.floor(points.min(axis=0) / step) * step
    cells = np.floor((points - origin) / step).astype(np.int64)
    dims = cells.max(axis=0) + 1
    uniq, counts = np.unique(cells, axis=0, return_counts=True)
    keep = counts > int(min_points)
    return VoxelGrid(origin, float(step), dims, uniq[keep], counts[keep],
                     int(min_points))


# Unit cube corners and the 12 outward-facing triangles over them.
_CUBE_CORNERS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
], dtype=np.float64)
_CUBE_FACES = np.array([
    [0, 2, 1], [0, 3, 2],      # bottom  (-z)
    [4, 5, 6], [4, 6, 7],      # top     (+z)
    [0, 1, 5], [0, 5, 4],      # front   (-y)
    [2, 3, 7], [2, 7, 6],      # back    (+y)
    [0, 4, 7], [0, 7, 3],      # left    (-x)
    [1, 2, 6], [1, 6, 5],      # right   (+x)
], dtype=np.int64)


def voxel_cube_mesh(grid: VoxelGrid) -> Tuple[TriangleMesh, np.ndarray]:
    """Cube geometry for every occupied voxel.

    Returns the mesh (12 triangles per voxel, outward normals) and a
    face -> voxel-row provenance array of length 12 * num_occupied.
    """
    n = grid.num_occupied
    if n == 0:
        raise ValidationError("grid has no occupied voxels")
    base = grid.origin + grid.indices * grid.step            # (N,3)
    verts = (base[:, None, :] + _CUBE_CORNERS[None] * grid.step).reshape(-1, 3)
    offsets = (np.arange(n) * 8)[:, None, None]
    faces = (_CUBE_FACES[None] + offsets).reshape(-1, 3)
    face_to_voxel = np.repeat(np.arange(n, dtype=np.int64), 12)
    return TriangleMesh(verts, faces), face_to_voxel


def transfer_voxel_labels(face_map: LabelMap, face_to_voxel: np.ndarray,
                          grid: VoxelGrid) -> LabelMap:
    """Collapse cube-face labels onto voxels by majority vote.

    Each voxel takes the most frequent non-void label among its own cube
    faces; ties pick the smallest label id; voxels whose faces are all
    unlabeled stay unlabeled.
    """
    if face_map.kind != "face":
        raise MismatchError("expected a face label map over cube geometry")
    tallies: Dict[int, Dict[int, int]] = {}
    for face_id, label in face_map.labels.items():
        if not (0 <= face_id < len(face_to_voxel)):
            raise MismatchError(f"face {face_id} outside cube mesh")
        if label == VOID_LABEL:
            continue
        voxel = int(face_to_voxel[face_id])
        hist = tallies.setdefault(voxel, {})
        hist[label] = hist.get(label, 0) + 1
    labels = {}
    for voxel, hist in tallies.items():
        top = max(hist.values())
        labels[voxel] = min(lbl for lbl, c in hist.items() if c == top)
    return LabelMap(scene_id=face_map.scene_id, kind="voxel", labels=labels,
                    num_elements=grid.num_occupied)


def save_grid(grid: VoxelGrid, out_dir) -> Path:
    """Write grid.json and occupied.csv into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "origin": grid.origin.tolist(),
        "step": grid.step,
        "dims": grid.dims.tolist(),
        "min_points": grid.min_points,
        "num_occupied": grid.num_occupied,
        "linearization": _LINEARIZATION,
    }
    with open(out / "grid.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
    with open(out / "occupied.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "count"])
        for lin, cnt in zip(grid.linear_indices().tolist(), grid.counts.tolist()):
            writer.writerow([lin, cnt])
    return out


def load_grid(in_dir) -> VoxelGrid:
    """Read a grid directory written by save_grid."""
    base = Path(in_dir)
    meta_path = base / "grid.json"
    csv_path = base / "occupied.csv"
    if not meta_path.is_file():
        raise FormatError(f"missing grid metadata: {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"unreadable grid metadata: {exc}") from exc
    for key in ("origin", "step", "dims", "min_points", "num_occupied"):
        if key not in meta:
            raise FormatError(f"grid.json missing '{key}'")
    dims = np.asarray(meta["dims"], dtype=np.int64)
    if not csv_path.is_file():
        raise FormatError(f"missing occupancy table: {csv_path}")
    linear, counts = [], []
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["index", "count"]:
            raise FormatError("occupied.csv must start with 'index,count'")
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"bad occupancy row: {row!r}")
            linear.append(int(row[0]))
            counts.append(int(row[1]))
    lin = np.asarray(linear, dtype=np.int64)
    if len(lin) != int(meta["num_occupied"]):
        raise MismatchError("occupied.csv row count disagrees with grid.json")
    plane = dims[1] * dims[2]
    i = lin // plane
    j = (lin % plane) // dims[2]
    k = lin % dims[2]
    indices = np.column_stack([i, j, k])
    return VoxelGrid(np.asarray(meta["origin"], dtype=np.float64),
                     float(meta["step"]), dims, indices,
                     np.asarray(counts, dtype=np.int64), int(meta["min_points"]))
