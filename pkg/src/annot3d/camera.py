"""Pinhole cameras and camera trajectories.

Convention: world -> camera rigid transform (R, t), camera looks down
+z, image origin top-left, pixel (u, v) = (fx*x/z + cx, fy*y/z + cy).
Trajectories are JSON Lines, one frame per line:

    {"frame_id": 0, "K": [9 floats row-major],
     "T_world_cam": [16 floats row-major], "width": 640, "height": 480}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from .errors import FormatError, ValidationError

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray      # (3,3) world -> camera
    translation: np.ndarray   # (3,)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image size must be at least 1x1")
        r = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64).reshape(3))
        if r.shape != (3, 3):
            raise ValidationError("rotation must be 3x3")
        if np.max(np.abs(r @ r.T - np.eye(3))) > _ORTHO_TOL:
            raise ValidationError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValidationError("rotation must be proper (det = +1)")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (N,2) and camera-space depths (N,) of world
        points. Points at or behind the camera plane get depth <= 0 and
        non-finite pixels; callers must mask by depth."""
        cam = self.world_to_camera(points)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * cam[:, 0] / z + self.cx
            v = self.fy * cam[:, 1] / z + self.cy
        return np.column_stack([u, v]), z

    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def pixel_ray(self, u: float, v: float) -> Tuple[np.ndarray, np.ndarray]:
        """World-space origin and unit direction of the ray through an
        image location (u, v in pixels)."""
        d_cam = np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])
        d_cam /= np.linalg.norm(d_cam)
        return self.camera_center(), self.rotation.T @ d_cam

    @classmethod
    def from_matrices(cls, k: np.ndarray, t_world_cam: np.ndarray,
                      width: int, height: int) -> "CameraModel":
        k = np.asarray(k, dtype=np.float64).reshape(3, 3)
        m = np.asarray(t_world_cam, dtype=np.float64).reshape(4, 4)
        if abs(k[0, 1]) > 1e-9 or np.max(np.abs(k[2] - [0, 0, 1])) > 1e-9 \
                or abs(k[1, 0]) > 1e-9:
            raise ValidationError("K must be an axis-aligned pinhole matrix")
        if np.max(np.abs(m[3] - [0, 0, 0, 1])) > 1e-9:
            raise ValidationError("T_world_cam must be a rigid 4x4 transform")
        return cls(fx=float(k[0, 0]), fy=float(k[1, 1]), cx=float(k[0, 2]),
                   cy=float(k[1, 2]), width=int(width), height=int(height),
                   rotation=m[:3, :3], translation=m[:3, 3])

    def to_matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        k = np.array([[self.fx, 0.0, self.cx],
                      [0.0, self.fy, self.cy],
                      [0.0, 0.0, 1.0]])
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return k, m


@dataclass(frozen=True)
class TrajectoryFrame:
    frame_id: int
    camera: CameraModel


def load_trajectory(path: Union[str, Path]) -> Tuple[List[TrajectoryFrame], List[str]]:
    """Parse a trajectory file; malformed rows are skipped and reported
    in the second return value as human-readable messages."""
    frames: List[TrajectoryFrame] = []
    skipped: List[str] = []
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing trajectory file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                camera = CameraModel.from_matrices(
                    np.asarray(rec["K"], dtype=np.float64),
                    np.asarray(rec["T_world_cam"], dtype=np.float64),
                    int(rec["width"]), int(rec["height"]))
                frames.append(TrajectoryFrame(int(rec["frame_id"]), camera))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError,
                    ValidationError) as e:
                skipped.append(f"line {line_no}: {e}")
    return frames, skipped


def save_trajectory(frames: List[TrajectoryFrame], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            k, m = frame.camera.to_matrices()
            rec = {
                "frame_id": frame.frame_id,
                "K": [float(x) for x in k.reshape(-1)],
                "T_world_cam": [float(x) for x in m.reshape(-1)],
                "width": frame.camera.width,
                "height": frame.camera.height,
            }
            fh.write(json.dumps(rec) + "\n")
