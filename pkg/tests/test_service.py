import hashlib
import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from annot3d.camera import CameraModel
from annot3d.chunks import PreprocessConfig
from annot3d.mesh import PointCloud, TriangleMesh, face_centroids
from annot3d.meshio import load_mesh, save_cloud, save_mesh
from annot3d.service import create_app
from annot3d.session import Session, Stroke, make_mesh_scene

from conftest import random_mesh


def two_cluster_mesh(rng):
    """Two face soups 20 m apart so the default grid makes >= 2 chunks."""
    a = random_mesh(rng, 30, extent=5.0)
    b = random_mesh(rng, 25, extent=5.0)
    verts = np.vstack([a.vertices, b.vertices + np.array([20.0, 0.0, 0.0])])
    faces = np.vstack([a.faces, b.faces + a.num_vertices])
    return TriangleMesh(vertices=verts, faces=faces)


def mesh_bytes(mesh, tmp_path, name="scene.ply"):
    path = tmp_path / name
    save_mesh(mesh, path)
    return path.read_bytes()


def make_client(tmp_path):
    return TestClient(create_app(tmp_path / "data", workers=2))


def upload_scene(client, data, config=None):
    form = {"config": json.dumps(config)} if config else {}
    resp = client.post("/scenes", files={"file": ("scene.ply", data)}, data=form)
    assert resp.status_code == 202, resp.text
    return resp.json()["scene_id"]


def wait_scene(client, scene_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        record = client.get(f"/scenes/{scene_id}").json()
        if record["status"] != "pending":
            return record
        time.sleep(0.02)
    raise AssertionError("scene preprocessing never finished")


def wait_job(client, job_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        record = client.get(f"/jobs/{job_id}").json()
        if record["status"] in ("done", "failed"):
            return record
        time.sleep(0.02)
    raise AssertionError("job never finished")


def ready_scene(client, rng, tmp_path):
    mesh = two_cluster_mesh(rng)
    scene_id = upload_scene(client, mesh_bytes(mesh, tmp_path))
    record = wait_scene(client, scene_id)
    assert record["status"] == "ready", record["message"]
    return scene_id, mesh


def new_session(client, scene_id, annotator="alice"):
    resp = client.post("/sessions", json={"scene_id": scene_id,
                                          "annotator": annotator})
    assert resp.status_code == 201, resp.text
    return resp.json()["session_id"]


def face_stroke(seq, face, label, radius=0.5):
    return {"seq": seq, "face": face, "label": label, "radius": radius}


def test_taxonomy_endpoint_serves_palette(tmp_path):
    client = make_client(tmp_path)
    resp = client.get("/taxonomy")
    assert resp.status_code == 200
    classes = resp.json()["classes"]
    assert [c["id"] for c in classes] == list(range(len(classes)))
    assert classes[0]["name"] == "void"
    for c in classes:
        assert len(c["color"]) == 3
        assert all(0 <= v <= 255 for v in c["color"])
    # colors must be distinct or the client could not tell labels apart
    assert len({tuple(c["color"]) for c in classes}) == len(classes)


def test_scene_upload_to_ready(tmp_path, rng):
    client = make_client(tmp_path)
    mesh = two_cluster_mesh(rng)
    data = mesh_bytes(mesh, tmp_path)
    scene_id = upload_scene(client, data)
    record = wait_scene(client, scene_id)
    assert record["status"] == "ready"
    assert record["kind"] == "mesh"
    assert record["element_kind"] == "face"
    assert record["num_elements"] == mesh.num_faces
    assert record["source_hash"] == hashlib.sha256(data).hexdigest()
    assert len(record["chunks"]) >= 2
    assert sum(c["num_faces"] for c in record["chunks"]) == mesh.num_faces


def test_corrupt_upload_fails_with_message(tmp_path):
    client = make_client(tmp_path)
    scene_id = upload_scene(client, b"ply\nnot really a header")
    record = wait_scene(client, scene_id)
    assert record["status"] == "failed"
    assert record["message"]


def test_reupload_new_id_same_hash(tmp_path, rng):
    client = make_client(tmp_path)
    data = mesh_bytes(two_cluster_mesh(rng), tmp_path)
    id_a = upload_scene(client, data)
    id_b = upload_scene(client, data)
    assert id_a != id_b
    rec_a = wait_scene(client, id_a)
    rec_b = wait_scene(client, id_b)
    assert rec_a["source_hash"] == rec_b["source_hash"]


def test_chunk_metadata_and_mesh_payload(tmp_path, rng):
    client = make_client(tmp_path)
    scene_id, _ = ready_scene(client, rng, tmp_path)
    record = client.get(f"/scenes/{scene_id}").json()
    first = record["chunks"][0]

    meta = client.get(f"/scenes/{scene_id}/chunks/{first['chunk_id']}?lod=0").json()
    assert meta["num_faces"] == first["num_faces"]
    assert len(meta["face_ids"]) == first["num_faces"]
    assert "source_to_lod" not in meta

    coarse = client.get(f"/scenes/{scene_id}/chunks/{first['chunk_id']}?lod=2").json()
    assert coarse["num_faces"] <= first["num_faces"]
    assert len(coarse["source_to_lod"]) == first["num_faces"]
    assert all(0 <= v < coarse["num_faces"] for v in coarse["source_to_lod"])

    raw = client.get(meta["mesh_url"])
    assert raw.status_code == 200
    ply_path = tmp_path / "chunk.ply"
    ply_path.write_bytes(raw.content)
    assert load_mesh(ply_path).num_faces == meta["num_faces"]

    assert client.get(f"/scenes/{scene_id}/chunks/{first['chunk_id']}?lod=7").status_code == 422
    assert client.get(f"/scenes/{scene_id}/chunks/999?lod=0").status_code == 404
    assert client.get("/scenes/nope/chunks/0?lod=0").status_code == 404


def test_stroke_flow_seq_conflicts_and_misses(tmp_path, rng):
    client = make_client(tmp_path)
    scene_id, mesh = ready_scene(client, rng, tmp_path)
    sid = new_session(client, scene_id)

    first = client.post(f"/sessions/{sid}/strokes", json=face_stroke(1, 0, 4))
    assert first.status_code == 200, first.text
    body = first.json()
    assert body["seq"] == 1
    assert 0 in body["affected"]
    assert body["progress"] > 0

    stale = client.post(f"/sessions/{sid}/strokes", json=face_stroke(1, 1, 4))
    assert stale.status_code == 409
    assert stale.json()["detail"]["expected_seq"] == 2

    miss = client.post(f"/sessions/{sid}/strokes", json={
        "seq": 2, "label": 3, "radius": 0.5,
        "ray": {"origin": [0.0, 0.0, 1000.0], "direction": [0.0, 0.0, 1.0]}})
    assert miss.status_code == 422
    progress = client.get(f"/sessions/{sid}/progress").json()
    assert progress["num_strokes"] == 1
    assert progress["next_seq"] == 2

    bad_label = client.post(f"/sessions/{sid}/strokes", json=face_stroke(2, 0, 12))
    assert bad_label.status_code == 422

    hit = client.post(f"/sessions/{sid}/strokes", json={
        "seq": 2, "label": 3, "radius": 0.4,
        "ray": {"origin": (face_centroids(mesh)[5] + [0, 0, 50]).tolist(),
                "direction": [0.0, 0.0, -1.0]}})
    assert hit.status_code == 200
    assert len(hit.json()["affected"]) >= 1


def test_session_needs_ready_scene(tmp_path):
    client = make_client(tmp_path)
    assert client.post("/sessions", json={"scene_id": "ghost"}).status_code == 404
    failed_id = upload_scene(client, b"garbage")
    wait_scene(client, failed_id)
    assert client.post("/sessions", json={"scene_id": failed_id}).status_code == 409


def test_export_matches_local_replay(tmp_path, rng):
    client = make_client(tmp_path)
    scene_id, mesh = ready_scene(client, rng, tmp_path)
    sid = new_session(client, scene_id)

    strokes = [(0, 4, 1.0), (12, 7, 2.5), (30, 2, 0.8), (12, 0, 1.2)]
    for seq, (face, label, radius) in enumerate(strokes, start=1):
        resp = client.post(f"/sessions/{sid}/strokes",
                           json=face_stroke(seq, face, label, radius))
        assert resp.status_code == 200

    local = Session(make_mesh_scene(scene_id, mesh, PreprocessConfig()))
    for face, label, radius in strokes:
        local.paint(Stroke(label=label, radius=radius, face=face))
    expected = local.export()

    for method in (client.get, client.post):
        exported = method(f"/sessions/{sid}/export").json()
        assert exported["kind"] == "face"
        assert exported["num_elements"] == mesh.num_faces
        assert {int(k): v for k, v in exported["labels"].items()} == expected.labels


def test_restart_recovers_sessions(tmp_path, rng):
    client = make_client(tmp_path)
    scene_id, _ = ready_scene(client, rng, tmp_path)
    sid = new_session(client, scene_id)
    for seq, face in enumerate((3, 9, 21), start=1):
        assert client.post(f"/sessions/{sid}/strokes",
                           json=face_stroke(seq, face, 5)).status_code == 200
    before = client.get(f"/sessions/{sid}/progress").json()
    exported_before = client.post(f"/sessions/{sid}/export").json()

    reborn = make_client(tmp_path)
    after = reborn.get(f"/sessions/{sid}/progress").json()
    assert after["progress"] == before["progress"]
    assert after["num_strokes"] == 3
    assert reborn.post(f"/sessions/{sid}/export").json() == exported_before

    resumed = reborn.post(f"/sessions/{sid}/strokes", json=face_stroke(4, 40, 2))
    assert resumed.status_code == 200
    assert resumed.json()["seq"] == 4


def test_fusion_job_single_session_and_idempotency(tmp_path, rng):
    client = make_client(tmp_path)
    scene_id, _ = ready_scene(client, rng, tmp_path)
    sid = new_session(client, scene_id)
    for seq, face in enumerate((1, 5, 17), start=1):
        client.post(f"/sessions/{sid}/strokes", json=face_stroke(seq, face, 6))
    exported = client.post(f"/sessions/{sid}/export").json()

    body = {"scene_id": scene_id, "session_ids": [sid]}
    job = client.post("/jobs/fusion", json=body).json()
    record = wait_job(client, job["job_id"])
    assert record["status"] == "done", record["message"]
    assert record["artifacts"]["labels"] == "fused.labels.csv"

    csv_text = client.get(
        f"/jobs/{job['job_id']}/artifacts/fused.labels.csv").text
    rows = [line.split(",") for line in csv_text.strip().splitlines()[1:]]
    fused = {int(e): int(l) for e, l in rows}
    assert fused == {int(k): v for k, v in exported["labels"].items()}

    again = client.post("/jobs/fusion", json=body).json()
    assert again["job_id"] == job["job_id"]


def test_fusion_disagreement_yields_uncertainty(tmp_path, rng):
    client = make_client(tmp_path)
    scene_id, _ = ready_scene(client, rng, tmp_path)
    sessions = []
    for annotator, label in (("alice", 3), ("bob", 5)):
        sid = new_session(client, scene_id, annotator)
        client.post(f"/sessions/{sid}/strokes", json=face_stroke(1, 2, label, 0.3))
        sessions.append(sid)
    job = client.post("/jobs/fusion",
                      json={"scene_id": scene_id, "session_ids": sessions}).json()
    record = wait_job(client, job["job_id"])
    assert record["status"] == "done"
    text = client.get(f"/jobs/{job['job_id']}/artifacts/fused.uncert.csv").text
    rows = {int(r.split(",")[0]): float(r.split(",")[1])
            for r in text.strip().splitlines()[1:]}
    assert rows[2] == 1.0


def test_fill_and_score_jobs(tmp_path, rng):
    client = make_client(tmp_path)
    scene_id, mesh = ready_scene(client, rng, tmp_path)
    sid = new_session(client, scene_id)
    client.post(f"/sessions/{sid}/strokes", json=face_stroke(1, 0, 4, 3.0))
    client.post(f"/sessions/{sid}/strokes", json=face_stroke(2, 40, 9, 3.0))

    fill = client.post("/jobs/fill", json={
        "scene_id": scene_id, "source": {"session_id": sid},
        "config": {"k": 3}}).json()
    record = wait_job(client, fill["job_id"])
    assert record["status"] == "done", record["message"]
    text = client.get(f"/jobs/{fill['job_id']}/artifacts/filled.labels.csv").text
    assert len(text.strip().splitlines()) - 1 == mesh.num_faces

    score = client.post("/jobs/score", json={
        "scene_id": scene_id,
        "gt": {"job_id": fill["job_id"]},
        "pred": {"job_id": fill["job_id"]}}).json()
    srec = wait_job(client, score["job_id"])
    assert srec["status"] == "done", srec["message"]
    report = client.get(f"/jobs/{score['job_id']}/artifacts/score.json").json()
    assert report["miou"] == pytest.approx(1.0)
    assert report["perc_area"] == pytest.approx(100.0)

    missing_u = client.post("/jobs/fill", json={
        "scene_id": scene_id, "source": {"session_id": sid},
        "config": {"k": 3, "th_u": 0.5}})
    assert missing_u.status_code == 422


def test_fill_with_fusion_uncertainty(tmp_path, rng):
    client = make_client(tmp_path)
    scene_id, mesh = ready_scene(client, rng, tmp_path)
    sessions = []
    for annotator, label in (("alice", 3), ("bob", 5), ("carol", 3)):
        sid = new_session(client, scene_id, annotator)
        client.post(f"/sessions/{sid}/strokes", json=face_stroke(1, 2, label, 2.0))
        client.post(f"/sessions/{sid}/strokes", json=face_stroke(2, 40, 7, 2.0))
        sessions.append(sid)
    fusion = client.post("/jobs/fusion", json={
        "scene_id": scene_id, "session_ids": sessions}).json()
    assert wait_job(client, fusion["job_id"])["status"] == "done"

    fill = client.post("/jobs/fill", json={
        "scene_id": scene_id,
        "source": {"job_id": fusion["job_id"]},
        "uncertainty": {"job_id": fusion["job_id"]},
        "config": {"k": 3, "th_u": 0.9}}).json()
    record = wait_job(client, fill["job_id"])
    assert record["status"] == "done", record["message"]
    text = client.get(f"/jobs/{fill['job_id']}/artifacts/filled.labels.csv").text
    assert len(text.strip().splitlines()) - 1 == mesh.num_faces


def test_render_job(tmp_path, rng):
    client = make_client(tmp_path)
    scene_id, mesh = ready_scene(client, rng, tmp_path)
    sid = new_session(client, scene_id)
    client.post(f"/sessions/{sid}/strokes", json=face_stroke(1, 0, 4, 100.0))

    center = mesh.vertices.mean(axis=0)
    cam = CameraModel(fx=32.0, fy=32.0, cx=16.0, cy=16.0, width=32, height=32,
                      rotation=np.eye(3),
                      translation=np.array([0.0, 0.0, 30.0]) - center)
    k, m = cam.to_matrices()
    frame = {"frame_id": 0, "K": k.reshape(-1).tolist(),
             "T_world_cam": m.reshape(-1).tolist(), "width": 32, "height": 32}
    job = client.post("/jobs/render", json={
        "scene_id": scene_id, "source": {"session_id": sid},
        "frames": [frame, {"nonsense": True}],
        "color_preview": True}).json()
    record = wait_job(client, job["job_id"])
    assert record["status"] == "done", record["message"]
    assert record["num_frames"] == 1
    assert len(record["skipped_rows"]) == 1
    assert "000000.labels.png" in record["artifacts"]
    png = client.get(f"/jobs/{job['job_id']}/artifacts/frames/000000.labels.png")
    assert png.status_code == 200
    assert png.content[:8] == b"\x89PNG\r\n\x1a\n"
    assert "000000.color.png" in record["artifacts"]


def test_job_validation_errors(tmp_path, rng):
    client = make_client(tmp_path)
    scene_id, _ = ready_scene(client, rng, tmp_path)
    assert client.post("/jobs/frobnicate", json={"scene_id": scene_id}).status_code == 404
    assert client.post("/jobs/fusion", json={"scene_id": scene_id,
                                             "session_ids": []}).status_code == 422
    assert client.post("/jobs/fusion", json={"session_ids": ["x"]}).status_code == 422
    assert client.get("/jobs/doesnotexist").status_code == 404

    other_id, _ = ready_scene(client, rng, tmp_path)
    other_sid = new_session(client, other_id)
    mismatch = client.post("/jobs/fill", json={
        "scene_id": scene_id, "source": {"session_id": other_sid}})
    assert mismatch.status_code == 422

    job = client.post("/jobs/score", json={
        "scene_id": scene_id,
        "gt": {"labels": {"0": 3}},
        "pred": {"labels": {"0": 3}}}).json()
    record = wait_job(client, job["job_id"])
    assert record["status"] == "done"
    assert client.get(f"/jobs/{job['job_id']}/artifacts/nope.bin").status_code == 404


def test_cloud_scene_voxel_sessions(tmp_path, rng):
    client = make_client(tmp_path)
    centers = np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [0.0, 5.0, 0.0]])
    points = np.vstack([c + rng.uniform(0.05, 0.45, (8, 3)) for c in centers])
    cloud_path = tmp_path / "cloud.ply"
    save_cloud(PointCloud(points), cloud_path)
    scene_id = upload_scene(client, cloud_path.read_bytes(),
                            config={"voxel_step": 0.5, "min_points": 5})
    record = wait_scene(client, scene_id)
    assert record["status"] == "ready", record["message"]
    assert record["kind"] == "cloud"
    assert record["element_kind"] == "voxel"
    assert record["num_elements"] == 3

    sid = new_session(client, scene_id)
    resp = client.post(f"/sessions/{sid}/strokes",
                       json=face_stroke(1, 0, 2, radius=1000.0))
    assert resp.status_code == 200
    exported = client.post(f"/sessions/{sid}/export").json()
    assert exported["kind"] == "voxel"
    assert {int(k) for k in exported["labels"]} == {0, 1, 2}
    assert set(exported["labels"].values()) == {2}
