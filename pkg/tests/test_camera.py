import json

import numpy as np
import pytest

from annot3d.camera import (CameraModel, TrajectoryFrame, load_trajectory,
                            save_trajectory)
from annot3d.errors import FormatError, ValidationError


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_camera(rng, width=64, height=48):
    return CameraModel(
        fx=float(rng.uniform(40, 120)), fy=float(rng.uniform(40, 120)),
        cx=width / 2 + float(rng.uniform(-2, 2)),
        cy=height / 2 + float(rng.uniform(-2, 2)),
        width=width, height=height,
        rotation=random_rotation(rng),
        translation=rng.normal(size=3))


def test_identity_projection_known_values():
    cam = CameraModel(fx=100.0, fy=100.0, cx=32.0, cy=24.0, width=64, height=48,
                      rotation=np.eye(3), translation=np.zeros(3))
    pix, depth = cam.project(np.array([[0.0, 0.0, 2.0], [0.64, 0.48, 2.0]]))
    assert np.allclose(pix[0], [32.0, 24.0])
    assert np.allclose(pix[1], [64.0, 48.0])
    assert np.allclose(depth, [2.0, 2.0])


def test_rotation_validation():
    bad = np.eye(3)
    bad[0, 1] = 1e-3
    with pytest.raises(ValidationError):
        CameraModel(fx=1, fy=1, cx=0, cy=0, width=2, height=2,
                    rotation=bad, translation=np.zeros(3))
    mirror = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValidationError):
        CameraModel(fx=1, fy=1, cx=0, cy=0, width=2, height=2,
                    rotation=mirror, translation=np.zeros(3))
    nearly = np.eye(3) + 1e-8 * np.ones((3, 3))
    CameraModel(fx=1, fy=1, cx=0, cy=0, width=2, height=2,
                rotation=nearly, translation=np.zeros(3))


def test_size_and_focal_validation():
    with pytest.raises(ValidationError):
        CameraModel(fx=0.0, fy=1, cx=0, cy=0, width=2, height=2,
                    rotation=np.eye(3), translation=np.zeros(3))
    with pytest.raises(ValidationError):
        CameraModel(fx=1, fy=1, cx=0, cy=0, width=0, height=2,
                    rotation=np.eye(3), translation=np.zeros(3))


def test_project_pixel_ray_round_trip(rng):
    for _ in range(5):
        cam = random_camera(rng)
        center = cam.camera_center()
        assert np.allclose(cam.world_to_camera(center), 0.0, atol=1e-12)
        points = center + (cam.rotation.T @ np.column_stack(
            [rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20),
             rng.uniform(1.0, 5.0, 20)]).T).T
        pix, depth = cam.project(points)
        assert (depth > 0).all()
        for p, (u, v) in zip(points, pix):
            origin, direction = cam.pixel_ray(u, v)
            off = p - origin
            dist = np.linalg.norm(off - (off @ direction) * direction)
            assert dist < 1e-8


def test_from_matrices_round_trip(rng):
    cam = random_camera(rng)
    k, m = cam.to_matrices()
    back = CameraModel.from_matrices(k, m, cam.width, cam.height)
    assert back.fx == cam.fx and back.fy == cam.fy
    assert back.cx == cam.cx and back.cy == cam.cy
    assert np.allclose(back.rotation, cam.rotation)
    assert np.allclose(back.translation, cam.translation)


def test_from_matrices_rejects_bad_shapes():
    k = np.array([[50.0, 0.5, 32.0], [0, 50.0, 24.0], [0, 0, 1]])
    with pytest.raises(ValidationError):
        CameraModel.from_matrices(k, np.eye(4), 64, 48)
    m = np.eye(4)
    m[3, 0] = 0.1
    with pytest.raises(ValidationError):
        CameraModel.from_matrices(np.diag([50.0, 50.0, 1.0]), m, 64, 48)


def test_trajectory_round_trip(tmp_path, rng):
    frames = [TrajectoryFrame(i * 10, random_camera(rng)) for i in range(3)]
    path = tmp_path / "traj.jsonl"
    save_trajectory(frames, path)
    loaded, skipped = load_trajectory(path)
    assert skipped == []
    assert [f.frame_id for f in loaded] == [0, 10, 20]
    for a, b in zip(frames, loaded):
        assert np.allclose(a.camera.rotation, b.camera.rotation)
        assert np.allclose(a.camera.translation, b.camera.translation)
        assert a.camera.fx == b.camera.fx
        assert (a.camera.width, a.camera.height) == (b.camera.width, b.camera.height)


def test_trajectory_skips_malformed_rows(tmp_path):
    cam = CameraModel(fx=50.0, fy=50.0, cx=8.0, cy=8.0, width=16, height=16,
                      rotation=np.eye(3), translation=np.zeros(3))
    k, m = cam.to_matrices()
    good = {"frame_id": 7, "K": k.reshape(-1).tolist(),
            "T_world_cam": m.reshape(-1).tolist(), "width": 16, "height": 16}
    missing = {k2: v for k2, v in good.items() if k2 != "K"}
    bad_rot = dict(good)
    bad_m = m.copy()
    bad_m[0, 0] = 2.0
    bad_rot["T_world_cam"] = bad_m.reshape(-1).tolist()
    path = tmp_path / "traj.jsonl"
    with open(path, "w") as fh:
        fh.write(json.dumps(good) + "\n")
        fh.write("{not json\n")
        fh.write(json.dumps(missing) + "\n")
        fh.write(json.dumps(bad_rot) + "\n")
        fh.write("\n")
    frames, skipped = load_trajectory(path)
    assert len(frames) == 1 and frames[0].frame_id == 7
    assert len(skipped) == 3
    assert skipped[0].startswith("line 2:")
    assert skipped[1].startswith("line 3:")
    assert skipped[2].startswith("line 4:")


def test_trajectory_missing_file(tmp_path):
    with pytest.raises(FormatError):
        load_trajectory(tmp_path / "nope.jsonl")
