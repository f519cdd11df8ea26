"""Interactive labeling sessions.

A session paints labels onto the LOD-0 faces of a preprocessed scene.
Each stroke either carries a world-space ray (the first face it hits
becomes the seed) or names a seed face directly; every face of the seed
face's chunk whose centroid lies within the stroke radius of the hit
point takes the stroke's label. Label 0 erases. The seed face itself is
always painted, even when its own centroid falls outside the radius.

Strokes accumulate in an append-only log with an undo cursor: the
working map is always exactly the replay of log[0:cursor] on top of the
initial map, so saving a session is just writing the log (JSON Lines,
one stroke per line) and loading is replaying it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .chunks import ChunkSet, PreprocessConfig, merge_chunks, split_chunks
from .errors import (FormatError, MismatchError, RayMissError,
                     ValidationError)
from .labels import VOID_LABEL, LabelMap, LabelTaxonomy, default_taxonomy
from .mesh import TriangleMesh, face_areas, face_centroids
from .voxel import VoxelGrid, transfer_voxel_labels, voxel_cube_mesh

_DET_EPS = 1e-12


@dataclass(frozen=True)
class SessionScene:
    """Paintable form of a scene: the LOD-0 mesh plus its chunk partition.

    Voxel scenes paint on the expanded cube mesh; grid and face_to_voxel
    carry the provenance needed to fold face labels back onto voxels at
    export time.
    """

    scene_id: str
    mesh: TriangleMesh
    chunk_set: ChunkSet
    grid: Optional[VoxelGrid] = None
    face_to_voxel: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.chunk_set.num_source_faces != self.mesh.num_faces:
            raise MismatchError("chunk set does not partition this mesh")
        if (self.grid is None) != (self.face_to_voxel is None):
            raise ValidationError("voxel scenes need both grid and face_to_voxel")
        if self.face_to_voxel is not None and len(self.face_to_voxel) != self.mesh.num_faces:
            raise MismatchError("face_to_voxel length disagrees with mesh")

    @property
    def is_voxel(self) -> bool:
        return self.grid is not None


def make_mesh_scene(scene_id: str, mesh: TriangleMesh,
                    config: Optional[PreprocessConfig] = None) -> SessionScene:
    return SessionScene(scene_id, mesh, split_chunks(mesh, config, scene_id))


def make_voxel_scene(scene_id: str, grid: VoxelGrid,
                     config: Optional[PreprocessConfig] = None) -> SessionScene:
    mesh, face_to_voxel = voxel_cube_mesh(grid)
    chunk_set = split_chunks(mesh, config, scene_id)
    return SessionScene(scene_id, mesh, chunk_set, grid, face_to_voxel)


@dataclass(frozen=True)
class Stroke:
    """One paint action: a ray or an explicit seed face, plus radius and
    label. Radius is in meters; label 0 erases."""

    label: int
    radius: float
    origin: Optional[np.ndarray] = None
    direction: Optional[np.ndarray] = None
    face: Optional[int] = None
    annotator: str = "anon"
    ts: float = 0.0

    def __post_init__(self):
        if not (self.radius > 0):
            raise ValidationError("stroke radius must be positive")
        if self.label < 0:
            raise ValidationError("stroke label must be >= 0")
        has_ray = self.origin is not None or self.direction is not None
        if has_ray == (self.face is not None):
            raise ValidationError("stroke needs exactly one of ray or seed face")
        if has_ray:
            if self.origin is None or self.direction is None:
                raise ValidationError("ray strokes need both origin and direction")
            o = np.asarray(self.origin, dtype=np.float64).reshape(3)
            d = np.asarray(self.direction, dtype=np.float64).reshape(3)
            if abs(np.linalg.norm(d) - 1.0) > 1e-6:
                raise ValidationError("ray direction must be unit length")
            o.setflags(write=False)
            d.setflags(write=False)
            object.__setattr__(self, "origin", o)
            object.__setattr__(self, "direction", d)
        else:
            object.__setattr__(self, "face", int(self.face))

    @property
    def is_ray(self) -> bool:
        return self.face is None

    def to_dict(self, seq: int) -> dict:
        rec = {"seq": seq, "annotator": self.annotator, "radius": self.radius,
               "label": self.label, "ts": self.ts}
        if self.is_ray:
            rec["ray"] = {"origin": self.origin.tolist(),
                          "direction": self.direction.tolist()}
        else:
            rec["face"] = self.face
        return rec

    @classmethod
    def from_dict(cls, rec: dict) -> "Stroke":
        try:
            kwargs = dict(label=int(rec["label"]), radius=float(rec["radius"]),
                          annotator=str(rec.get("annotator", "anon")),
                          ts=float(rec.get("ts", 0.0)))
            if "ray" in rec:
                kwargs["origin"] = np.asarray(rec["ray"]["origin"], dtype=np.float64)
                kwargs["direction"] = np.asarray(rec["ray"]["direction"], dtype=np.float64)
            elif "face" in rec:
                kwargs["face"] = int(rec["face"])
            else:
                raise KeyError("ray|face")
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"malformed stroke record: {e}") from e
        return cls(**kwargs)


def raycast_faces(mesh: TriangleMesh, origin, direction,
                  centroids: Optional[np.ndarray] = None) -> Optional[Tuple[int, np.ndarray]]:
    """First face hit by the ray (smallest positive t, ties to the
    smaller face id) and the hit point; None when nothing is hit."""
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    v0 = mesh.vertices[mesh.faces[:, 0]]
    e1 = mesh.vertices[mesh.faces[:, 1]] - v0
    e2 = mesh.vertices[mesh.faces[:, 2]] - v0
    pvec = np.cross(np.broadcast_to(d, e2.shape), e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    valid = np.abs(det) > _DET_EPS
    inv = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)
    tvec = o - v0
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = np.einsum("j,ij->i", d, qvec) * inv
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    hit = valid & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 0.0)
    if not hit.any():
        return None
    t_masked = np.where(hit, t, np.inf)
    face_id = int(np.argmin(t_masked))     # first minimum = smallest id on ties
    return face_id, o + t_masked[face_id] * d


class Session:
    """Mutable labeling state over one scene.

    The invariant maintained throughout: the working labels equal the
    initial map plus the replay of strokes[0:cursor], in order.
    """

    def __init__(self, scene: SessionScene, taxonomy: Optional[LabelTaxonomy] = None,
                 initial: Optional[LabelMap] = None, cross_chunk: bool = False):
        self.scene = scene
        self.taxonomy = taxonomy or default_taxonomy()
        self.cross_chunk = bool(cross_chunk)
        self._centroids = face_centroids(scene.mesh)
        self._areas = face_areas(scene.mesh)
        self._owner = scene.chunk_set.face_to_chunk()
        if initial is not None:
            if initial.scene_id != scene.scene_id:
                raise MismatchError(
                    f"initial map is for scene '{initial.scene_id}', "
                    f"session scene is '{scene.scene_id}'")
            if initial.kind != "face":
                raise MismatchError("initial map must use face granularity")
            if initial.labels and max(initial.labels) >= scene.mesh.num_faces:
                raise MismatchError("initial map references faces beyond the scene")
            initial.validate_against(self.taxonomy)
            self._initial: Dict[int, int] = dict(initial.labels)
        else:
            self._initial = {}
        self.labels: Dict[int, int] = dict(self._initial)
        self.strokes: List[Stroke] = []
        self.cursor: int = 0

    # -- queries ---------------------------------------------------------

    def raycast(self, origin, direction) -> Optional[Tuple[int, np.ndarray]]:
        return raycast_faces(self.scene.mesh, origin, direction)

    def unlabeled_elements(self) -> np.ndarray:
        """Sorted ids of faces still carrying label 0."""
        mask = np.ones(self.scene.mesh.num_faces, dtype=bool)
        if self.labels:
            mask[np.fromiter(self.labels.keys(), dtype=np.int64,
                             count=len(self.labels))] = False
        return np.nonzero(mask)[0]

    def progress(self) -> float:
        """Percentage of total face area currently labeled."""
        if not self.labels:
            return 0.0
        ids = np.fromiter(self.labels.keys(), dtype=np.int64, count=len(self.labels))
        return 100.0 * float(self._areas[ids].sum()) / float(self._areas.sum())

    def working_map(self) -> LabelMap:
        return LabelMap(self.scene.scene_id, "face", dict(self.labels),
                        num_elements=self.scene.mesh.num_faces)

    # -- painting --------------------------------------------------------

    def _candidate_faces(self, chunk_id: int) -> np.ndarray:
        chunk = self.scene.chunk_set.chunk(chunk_id)
        if not self.cross_chunk:
            return chunk.face_ids
        parts = [chunk.face_ids] + [c.face_ids for c in
                                    self.scene.chunk_set.neighbor_chunks(chunk_id)]
        return np.sort(np.concatenate(parts))

    def _affected(self, stroke: Stroke) -> np.ndarray:
        if stroke.is_ray:
            hit = self.raycast(stroke.origin, stroke.direction)
            if hit is None:
                raise RayMissError("stroke ray does not hit the scene")
            seed, point = hit
        else:
            seed = stroke.face
            if not (0 <= seed < self.scene.mesh.num_faces):
                raise ValidationError(f"seed face {seed} out of range")
            point = self._centroids[seed]
        candidates = self._candidate_faces(int(self._owner[seed]))
        delta = self._centroids[candidates] - point
        within = np.einsum("ij,ij->i", delta, delta) <= stroke.radius ** 2
        affected = candidates[within]
        if seed not in affected:
            affected = np.sort(np.append(affected, seed))
        return affected

    def _apply(self, stroke: Stroke) -> np.ndarray:
        affected = self._affected(stroke)
        if stroke.label == VOID_LABEL:
            for f in affected:
                self.labels.pop(int(f), None)
        else:
            for f in affected:
                self.labels[int(f)] = stroke.label
        return affected

    def paint(self, stroke: Stroke) -> np.ndarray:
        """Apply one stroke; returns the sorted ids of affected faces.

        A ray miss raises RayMissError and leaves every part of the
        session untouched. Painting after undo discards the undone tail
        of the log before appending.
        """
        if not self.taxonomy.has(stroke.label):
            raise ValidationError(f"label {stroke.label} not in taxonomy")
        affected = self._apply(stroke)
        del self.strokes[self.cursor:]
        self.strokes.append(stroke)
        self.cursor += 1
        return affected

    def undo(self) -> None:
        """Step the cursor back one stroke and rebuild the working map by
        replaying the remaining prefix of the log."""
        if self.cursor == 0:
            raise ValidationError("nothing to undo")
        self.cursor -= 1
        self.labels = dict(self._initial)
        for stroke in self.strokes[: self.cursor]:
            self._apply(stroke)

    # -- export ----------------------------------------------------------

    def export(self) -> LabelMap:
        """Scene-level label map: chunk merge for meshes, plus the
        face-to-voxel majority transfer for voxel scenes."""
        per_chunk: Dict[int, Dict[int, int]] = {}
        chunk_set = self.scene.chunk_set
        for face, label in self.labels.items():
            cid = int(self._owner[face])
            per_chunk.setdefault(cid, {})[face] = label
        chunk_maps = {}
        for cid, face_labels in per_chunk.items():
            chunk = chunk_set.chunk(cid)
            globals_sorted = np.fromiter(sorted(face_labels), dtype=np.int64,
                                         count=len(face_labels))
            locals_ = chunk.local_of_global(globals_sorted)
            chunk_maps[cid] = LabelMap(
                self.scene.scene_id, "face",
                {int(l): face_labels[int(g)] for l, g in zip(locals_, globals_sorted)})
        merged = merge_chunks(chunk_set, chunk_maps)
        if self.scene.is_voxel:
            return transfer_voxel_labels(merged, self.scene.face_to_voxel,
                                         self.scene.grid)
        return merged


def create_session(scene: SessionScene, taxonomy: Optional[LabelTaxonomy] = None,
                   initial: Optional[LabelMap] = None,
                   cross_chunk: bool = False) -> Session:
    return Session(scene, taxonomy, initial, cross_chunk)


def replay(strokes: Sequence[Stroke], scene: SessionScene,
           taxonomy: Optional[LabelTaxonomy] = None,
           initial: Optional[LabelMap] = None,
           cross_chunk: bool = False) -> Session:
    """Rebuild a session from its stroke log. Deterministic: the same log
    over the same scene always yields the same working map."""
    session = Session(scene, taxonomy, initial, cross_chunk)
    for i, stroke in enumerate(strokes):
        try:
            session.paint(stroke)
        except RayMissError as e:
            raise ValidationError(f"stroke {i} no longer hits the scene: {e}") from e
    return session


def save_stroke_log(strokes: Sequence[Stroke], path: Union[str, Path]) -> None:
    """One JSON record per line, seq numbered from 1."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq, stroke in enumerate(strokes, start=1):
            fh.write(json.dumps(stroke.to_dict(seq)) + "\n")


def load_stroke_log(path: Union[str, Path]) -> List[Stroke]:
    strokes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{line_no + 1}: not valid JSON: {e}") from e
            if int(rec.get("seq", -1)) != len(strokes) + 1:
                raise FormatError(
                    f"{path}:{line_no + 1}: seq {rec.get('seq')} out of order "
                    f"(expected {len(strokes) + 1})")
            strokes.append(Stroke.from_dict(rec))
    return strokes
