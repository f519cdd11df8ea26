"""Spatial chunking of large scenes.

A scene mesh is split into grid cells by face centroid so the labeling
session can stream and paint one neighborhood at a time. Each chunk keeps
its own LOD stack plus the ids of the source faces it owns; together the
chunks partition the face set exactly, which is what makes merging
per-chunk label maps back into a scene-level map lossless.

On disk a chunk set is a directory tree:

    chunks/index.json
    chunks/<chunk_id>/lod0.ply
    chunks/<chunk_id>/lod1.ply
    chunks/<chunk_id>/lod2.ply
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, MismatchError, ValidationError
from .labels import LabelMap
from .lod import LodLevel, build_lods, validate_ratios
from .mesh import TriangleMesh, face_centroids
from .meshio import load_mesh, save_mesh

DEFAULT_CELL_SIZE = 8.0
DEFAULT_LOD_RATIOS = (1.0, 0.3, 0.1)
DEFAULT_VOXEL_STEP = 0.1
DEFAULT_MIN_POINTS = 5


@dataclass(frozen=True)
class PreprocessConfig:
    """Knobs for the offline scene preparation stage."""

    cell_size: float = DEFAULT_CELL_SIZE
    lod_ratios: Tuple[float, float, float] = DEFAULT_LOD_RATIOS
    voxel_step: float = DEFAULT_VOXEL_STEP
    min_points: int = DEFAULT_MIN_POINTS

    def __post_init__(self):
        if not (self.cell_size > 0):
            raise ValidationError("cell_size must be positive")
        validate_ratios(self.lod_ratios)
        if not (self.voxel_step > 0):
            raise ValidationError("voxel_step must be positive")
        if self.min_points < 0:
            raise ValidationError("min_points must be >= 0")

    def to_dict(self) -> dict:
        return {
            "cell_size": self.cell_size,
            "lod_ratios": list(self.lod_ratios),
            "voxel_step": self.voxel_step,
            "min_points": self.min_points,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PreprocessConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValidationError(f"unknown preprocess options: {sorted(extra)}")
        kwargs = dict(data)
        if "lod_ratios" in kwargs:
            kwargs["lod_ratios"] = tuple(kwargs["lod_ratios"])
        return cls(**kwargs)


@dataclass(frozen=True)
class Chunk:
    """One grid cell of the scene with its LOD stack.

    face_ids are global source-face ids sorted ascending; local face j of
    the LOD-0 mesh corresponds to source face face_ids[j].
    """

    chunk_id: int
    cell: Tuple[int, int, int]
    face_ids: np.ndarray
    levels: Tuple[LodLevel, ...]

    def __post_init__(self):
        ids = np.ascontiguousarray(np.asarray(self.face_ids, dtype=np.int64))
        ids.setflags(write=False)
        object.__setattr__(self, "face_ids", ids)
        if ids.ndim != 1 or len(ids) == 0:
            raise ValidationError("chunk must own at least one face")
        if np.any(np.diff(ids) <= 0):
            raise ValidationError("chunk face ids must be sorted and unique")
        if len(self.levels) != 3:
            raise ValidationError("chunk needs exactly three LOD levels")
        if self.levels[0].mesh.num_faces != len(ids):
            raise MismatchError("LOD-0 face count disagrees with owned face ids")
        for lv in self.levels:
            m = lv.source_to_lod
            if len(m) != len(ids) or (len(m) and (m.min() < 0 or m.max() >= lv.mesh.num_faces)):
                raise MismatchError("LOD coverage mapping is not total over chunk faces")

    @property
    def num_faces(self) -> int:
        return len(self.face_ids)

    def lod_mesh(self, level: int) -> TriangleMesh:
        return self.levels[level].mesh

    def local_of_global(self, global_face_ids: np.ndarray) -> np.ndarray:
        """Positions of the given global face ids inside this chunk."""
        pos = np.searchsorted(self.face_ids, global_face_ids)
        ok = (pos < len(self.face_ids)) & (self.face_ids[np.minimum(pos, len(self.face_ids) - 1)] == global_face_ids)
        if not np.all(ok):
            raise MismatchError("face id does not belong to this chunk")
        return pos


@dataclass(frozen=True)
class ChunkSet:
    scene_id: str
    cell_size: float
    num_source_faces: int
    chunks: Tuple[Chunk, ...]
    _cell_lookup: Dict[Tuple[int, int, int], int] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.num_source_faces < 0:
            raise ValidationError("negative source face count")
        seen = np.concatenate([c.face_ids for c in self.chunks]) if self.chunks else np.empty(0, np.int64)
        if len(seen) != self.num_source_faces:
            raise MismatchError(
                f"chunks own {len(seen)} faces, scene has {self.num_source_faces}")
        if len(seen) and (len(np.unique(seen)) != len(seen) or seen.min() != 0
                          or seen.max() != self.num_source_faces - 1):
            raise MismatchError("chunk face ids do not partition the scene faces")
        lookup = {c.cell: c.chunk_id for c in self.chunks}
        if len(lookup) != len(self.chunks):
            raise MismatchError("duplicate chunk cells")
        object.__setattr__(self, "_cell_lookup", lookup)

    def __len__(self) -> int:
        return len(self.chunks)

    def chunk(self, chunk_id: int) -> Chunk:
        if not (0 <= chunk_id < len(self.chunks)):
            raise ValidationError(f"no chunk {chunk_id}")
        return self.chunks[chunk_id]

    def chunk_at_cell(self, cell: Tuple[int, int, int]) -> Optional[Chunk]:
        idx = self._cell_lookup.get(tuple(int(c) for c in cell))
        return None if idx is None else self.chunks[idx]

    def face_to_chunk(self) -> np.ndarray:
        """Array mapping every global face id to its owning chunk id."""
        out = np.empty(self.num_source_faces, dtype=np.int64)
        for c in self.chunks:
            out[c.face_ids] = c.chunk_id
        return out

    def neighbor_chunks(self, chunk_id: int) -> List[Chunk]:
        """Chunks in the 26 cells surrounding the given chunk's cell."""
        cx, cy, cz = self.chunk(chunk_id).cell
        found = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    if dx == dy == dz == 0:
                        continue
                    c = self.chunk_at_cell((cx + dx, cy + dy, cz + dz))
                    if c is not None:
                        found.append(c)
        return found


def centroid_cells(mesh: TriangleMesh, cell_size: float) -> np.ndarray:
    """Integer grid cell of each face centroid, shape (F,3)."""
    return np.floor(face_centroids(mesh) / float(cell_size)).astype(np.int64)


def _submesh(mesh: TriangleMesh, face_ids: np.ndarray) -> TriangleMesh:
    faces = mesh.faces[face_ids]
    used, inverse = np.unique(faces, return_inverse=True)
    local_faces = inverse.reshape(-1, 3).astype(np.int64)
    colors = mesh.colors[used] if mesh.colors is not None else None
    return TriangleMesh(mesh.vertices[used], local_faces, colors)


def split_chunks(mesh: TriangleMesh, config: Optional[PreprocessConfig] = None,
                 scene_id: str = "scene") -> ChunkSet:
    """Partition a mesh into grid chunks and build each chunk's LOD stack."""
    config = config or PreprocessConfig()
    cells = centroid_cells(mesh, config.cell_size)
    unique_cells, inverse = np.unique(cells, axis=0, return_inverse=True)
    chunks = []
    for chunk_id in range(len(unique_cells)):
        face_ids = np.nonzero(inverse == chunk_id)[0].astype(np.int64)
        sub = _submesh(mesh, face_ids)
        levels = tuple(build_lods(sub, config.lod_ratios))
        chunks.append(Chunk(chunk_id, tuple(int(v) for v in unique_cells[chunk_id]),
                            face_ids, levels))
    return ChunkSet(scene_id, config.cell_size, mesh.num_faces, tuple(chunks))


def merge_chunks(chunk_set: ChunkSet, per_chunk: Mapping[int, LabelMap]) -> LabelMap:
    """Combine per-chunk face label maps (keyed by LOD-0 local face index)
    into one scene-level map over global face ids."""
    merged: Dict[int, int] = {}
    for chunk_id, label_map in per_chunk.items():
        chunk = chunk_set.chunk(int(chunk_id))
        if label_map.kind != "face":
            raise MismatchError("chunk label maps must be face maps")
        for local, label in label_map.labels.items():
            if not (0 <= local < chunk.num_faces):
                raise MismatchError(
                    f"face {local} out of range for chunk {chunk_id}")
            merged[int(chunk.face_ids[local])] = label
    return LabelMap(scene_id=chunk_set.scene_id, kind="face", labels=merged,
                    num_elements=chunk_set.num_source_faces)


def _index_payload(chunk_set: ChunkSet) -> dict:
    entries = []
    for c in chunk_set.chunks:
        entries.append({
            "chunk_id": c.chunk_id,
            "cell": list(c.cell),
            "face_ids": c.face_ids.tolist(),
            "face_counts": [lv.mesh.num_faces for lv in c.levels],
            "source_to_lod": {
                str(level): c.levels[level].source_to_lod.tolist()
                for level in (1, 2)
            },
        })
    return {
        "scene_id": chunk_set.scene_id,
        "cell_size": chunk_set.cell_size,
        "num_source_faces": chunk_set.num_source_faces,
        "chunks": entries,
    }


def save_chunkset(chunk_set: ChunkSet, root) -> Path:
    """Write chunks/index.json plus per-chunk LOD meshes below root."""
    base = Path(root) / "chunks"
    base.mkdir(parents=True, exist_ok=True)
    for c in chunk_set.chunks:
        cdir = base / str(c.chunk_id)
        cdir.mkdir(parents=True, exist_ok=True)
        for level, lv in enumerate(c.levels):
            save_mesh(lv.mesh, cdir / f"lod{level}.ply", binary=True)
    with open(base / "index.json", "w", encoding="utf-8") as fh:
        json.dump(_index_payload(chunk_set), fh, indent=1)
    return base


def load_chunkset(root) -> ChunkSet:
    """Load a chunk directory written by save_chunkset."""
    base = Path(root) / "chunks"
    index_path = base / "index.json"
    if not index_path.is_file():
        raise FormatError(f"missing chunk index: {index_path}")
    with open(index_path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"unreadable chunk index: {exc}") from exc
    for key in ("scene_id", "cell_size", "num_source_faces", "chunks"):
        if key not in data:
            raise FormatError(f"chunk index missing '{key}'")
    chunks = []
    for entry in data["chunks"]:
        chunk_id = int(entry["chunk_id"])
        face_ids = np.asarray(entry["face_ids"], dtype=np.int64)
        levels = []
        for level in range(3):
            mesh = load_mesh(base / str(chunk_id) / f"lod{level}.ply")
            if level == 0:
                mapping = np.arange(mesh.num_faces, dtype=np.int64)
            else:
                mapping = np.asarray(entry["source_to_lod"][str(level)], dtype=np.int64)
            levels.append(LodLevel(mesh, mapping))
        declared = [int(n) for n in entry["face_counts"]]
        actual = [lv.mesh.num_faces for lv in levels]
        if declared != actual:
            raise MismatchError(
                f"chunk {chunk_id}: index declares {declared} faces, meshes have {actual}")
        chunks.append(Chunk(chunk_id, tuple(int(v) for v in entry["cell"]),
                            face_ids, tuple(levels)))
    chunks.sort(key=lambda c: c.chunk_id)
    return ChunkSet(str(data["scene_id"]), float(data["cell_size"]),
                    int(data["num_source_faces"]), tuple(chunks))
