import json
import math

import numpy as np
import pytest

from annot3d.chunks import (PreprocessConfig, centroid_cells, load_chunkset,
                            merge_chunks, save_chunkset, split_chunks)
from annot3d.errors import FormatError, MismatchError, ValidationError
from annot3d.labels import LabelMap
from annot3d.mesh import face_centroid

from conftest import random_mesh


def brute_force_cells(mesh, cell_size):
    """Per-face grid cell computed one face at a time with math.floor."""
    out = []
    for f in range(mesh.num_faces):
        c = face_centroid(mesh, f)
        out.append(tuple(math.floor(x / cell_size) for x in c))
    return out


def test_cells_match_brute_force(rng):
    mesh = random_mesh(rng, 250, extent=30.0)
    got = centroid_cells(mesh, 8.0)
    expected = brute_force_cells(mesh, 8.0)
    assert [tuple(row) for row in got.tolist()] == expected


def test_split_partitions_faces(rng):
    mesh = random_mesh(rng, 300, extent=30.0)
    cs = split_chunks(mesh, PreprocessConfig(cell_size=8.0), scene_id="s1")
    all_ids = np.sort(np.concatenate([c.face_ids for c in cs.chunks]))
    assert np.array_equal(all_ids, np.arange(mesh.num_faces))
    cells = brute_force_cells(mesh, 8.0)
    for chunk in cs.chunks:
        for fid in chunk.face_ids:
            assert cells[fid] == chunk.cell


def test_chunk_geometry_matches_source(rng):
    mesh = random_mesh(rng, 80, extent=20.0)
    cs = split_chunks(mesh, PreprocessConfig(cell_size=8.0))
    for chunk in cs.chunks:
        lod0 = chunk.levels[0].mesh
        for local, fid in enumerate(chunk.face_ids):
            got = lod0.vertices[lod0.faces[local]]
            want = mesh.vertices[mesh.faces[fid]]
            assert np.array_equal(got, want)


def test_face_to_chunk_lookup(rng):
    mesh = random_mesh(rng, 120, extent=25.0)
    cs = split_chunks(mesh)
    owner = cs.face_to_chunk()
    for chunk in cs.chunks:
        assert np.all(owner[chunk.face_ids] == chunk.chunk_id)


def test_merge_round_trip(rng):
    mesh = random_mesh(rng, 200, extent=25.0)
    cs = split_chunks(mesh, scene_id="roundtrip")
    scene_labels = {int(f): int(rng.integers(1, 12))
                    for f in rng.choice(mesh.num_faces, size=90, replace=False)}
    per_chunk = {}
    for chunk in cs.chunks:
        local = {}
        for pos, fid in enumerate(chunk.face_ids):
            if int(fid) in scene_labels:
                local[pos] = scene_labels[int(fid)]
        if local:
            per_chunk[chunk.chunk_id] = LabelMap("roundtrip", "face", local)
    merged = merge_chunks(cs, per_chunk)
    assert merged.labels == scene_labels
    assert merged.num_elements == mesh.num_faces


def test_merge_rejects_bad_input(rng):
    mesh = random_mesh(rng, 30, extent=6.0)
    cs = split_chunks(mesh)
    with pytest.raises(MismatchError):
        merge_chunks(cs, {0: LabelMap("scene", "voxel", {0: 1})})
    big = cs.chunks[0].num_faces + 5
    with pytest.raises(MismatchError):
        merge_chunks(cs, {0: LabelMap("scene", "face", {big: 1})})


def test_neighbor_chunks(rng):
    # Two faces in adjacent cells along x.
    v = np.array([
        [1.0, 1.0, 1.0], [2.0, 1.0, 1.0], [1.0, 2.0, 1.0],
        [9.0, 1.0, 1.0], [10.0, 1.0, 1.0], [9.0, 2.0, 1.0],
    ])
    f = np.array([[0, 1, 2], [3, 4, 5]])
    from annot3d.mesh import TriangleMesh
    cs = split_chunks(TriangleMesh(v, f), PreprocessConfig(cell_size=8.0))
    assert len(cs) == 2
    neighbors = cs.neighbor_chunks(0)
    assert [c.chunk_id for c in neighbors] == [1]
    assert cs.chunk_at_cell((5, 5, 5)) is None


def test_chunk_local_of_global(rng):
    mesh = random_mesh(rng, 60, extent=20.0)
    cs = split_chunks(mesh)
    chunk = cs.chunks[0]
    pos = chunk.local_of_global(chunk.face_ids[::2])
    assert np.array_equal(pos, np.arange(0, chunk.num_faces, 2))
    foreign = cs.chunks[-1].face_ids[:1] if len(cs) > 1 else np.array([mesh.num_faces + 1])
    with pytest.raises(MismatchError):
        chunk.local_of_global(foreign)


def test_save_load_round_trip(rng, tmp_path):
    mesh = random_mesh(rng, 150, extent=25.0)
    cs = split_chunks(mesh, scene_id="disk")
    save_chunkset(cs, tmp_path)
    loaded = load_chunkset(tmp_path)
    assert loaded.scene_id == "disk"
    assert loaded.num_source_faces == cs.num_source_faces
    assert len(loaded) == len(cs)
    for a, b in zip(cs.chunks, loaded.chunks):
        assert a.cell == b.cell
        assert np.array_equal(a.face_ids, b.face_ids)
        for la, lb in zip(a.levels, b.levels):
            # Files store float32 coordinates.
            assert np.array_equal(la.mesh.vertices.astype(np.float32),
                                  lb.mesh.vertices.astype(np.float32))
            assert np.array_equal(la.mesh.faces, lb.mesh.faces)
            assert np.array_equal(la.source_to_lod, lb.source_to_lod)


def test_load_rejects_corrupt_index(rng, tmp_path):
    mesh = random_mesh(rng, 40, extent=10.0)
    save_chunkset(split_chunks(mesh), tmp_path)
    index_path = tmp_path / "chunks" / "index.json"
    data = json.loads(index_path.read_text())
    data["chunks"][0]["face_counts"][1] += 1
    index_path.write_text(json.dumps(data))
    with pytest.raises(MismatchError):
        load_chunkset(tmp_path)
    with pytest.raises(FormatError):
        load_chunkset(tmp_path / "nowhere")


def test_config_validation():
    with pytest.raises(ValidationError):
        PreprocessConfig(cell_size=0.0)
    with pytest.raises(ValidationError):
        PreprocessConfig(min_points=-1)
    with pytest.raises(ValidationError):
        PreprocessConfig(lod_ratios=(1.0, 0.4, 0.7))
    with pytest.raises(ValidationError):
        PreprocessConfig.from_dict({"cell_size": 4.0, "bogus": 1})
    cfg = PreprocessConfig.from_dict({"cell_size": 4.0, "lod_ratios": [1.0, 0.5, 0.25]})
    assert cfg.lod_ratios == (1.0, 0.5, 0.25)
    assert PreprocessConfig.from_dict(cfg.to_dict()) == cfg
