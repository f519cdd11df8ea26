#!/usr/bin/env python3
"""Rebuild the bundled demo scene and its golden pipeline outputs.

The demo is a small room: a 10x10 m floor, a bed-sized box and a
table-sized box. Two synthetic annotators paint it with ray strokes
(disagreeing over the table so fusion and uncertainty have real work to
do), and the full command line pipeline is run over the files. Every
stage output is stored under demo/golden/ and the pipeline test asserts
byte equality against them, so regenerate with care: any change here
invalidates the goldens on purpose.

Usage: python scripts/regen_golden.py
"""

import shutil
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from annot3d.camera import CameraModel, TrajectoryFrame, save_trajectory  # noqa: E402
from annot3d.cli import main  # noqa: E402
from annot3d.labels import LabelMap, save_label_map  # noqa: E402
from annot3d.mesh import TriangleMesh  # noqa: E402
from annot3d.meshio import save_mesh  # noqa: E402
from annot3d.session import Stroke, save_stroke_log  # noqa: E402

DEMO = REPO / "demo"
GOLDEN = DEMO / "golden"

FLOOR, BED, TABLE, FURNITURE = 4, 1, 9, 5


def floor_grid(n=10):
    xs, ys = np.meshgrid(np.arange(n + 1, dtype=float),
                         np.arange(n + 1, dtype=float))
    verts = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])
    a = (np.arange(n * n) // n) * (n + 1) + np.arange(n * n) % n
    faces = np.empty((2 * n * n, 3), dtype=np.int64)
    faces[0::2] = np.column_stack([a, a + 1, a + n + 2])
    faces[1::2] = np.column_stack([a, a + n + 2, a + n + 1])
    return verts, faces


def box(lo, hi):
    """Axis-aligned cuboid as 12 triangles with outward winding."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    v = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]],
                 dtype=float)
    quads = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
             (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
    f = []
    for a, b, c, d in quads:
        f.append([a, b, c])
        f.append([a, c, d])
    return v, np.asarray(f, dtype=np.int64)


def build_scene():
    verts, faces = floor_grid()
    parts = [(verts, faces)]
    labels = [FLOOR] * len(faces)
    for corner_lo, corner_hi, label in (
            ((2.0, 2.0, 0.0), (4.0, 4.0, 1.5), BED),
            ((6.0, 5.0, 0.0), (8.0, 7.0, 1.0), TABLE)):
        v, f = box(corner_lo, corner_hi)
        parts.append((v, f))
        labels += [label] * len(f)
    offset = 0
    all_v, all_f = [], []
    for v, f in parts:
        all_v.append(v)
        all_f.append(f + offset)
        offset += len(v)
    mesh = TriangleMesh(np.concatenate(all_v), np.concatenate(all_f))
    return mesh, np.asarray(labels)


def down_stroke(x, y, radius, label, annotator, ts):
    return Stroke(label=label, radius=radius,
                  origin=np.array([x, y, 6.0]), direction=[0.0, 0.0, -1.0],
                  annotator=annotator, ts=ts)


def annotator_strokes():
    alice = [down_stroke(x, y, 2.2, FLOOR, "alice", 10.0 + i)
             for i, (x, y) in enumerate(
                 [(1.5, 1.5), (1.5, 5.0), (1.5, 8.5), (5.0, 1.5),
                  (5.0, 8.5), (8.5, 1.5), (8.5, 8.5), (4.5, 4.5)])]
    alice.append(down_stroke(3.0, 3.0, 2.0, BED, "alice", 20.0))
    alice.append(down_stroke(7.0, 6.0, 1.8, TABLE, "alice", 21.0))

    bob = [down_stroke(x, y, 2.4, FLOOR, "bob", 30.0 + i)
           for i, (x, y) in enumerate(
               [(1.8, 1.8), (1.2, 5.2), (1.6, 8.4), (5.2, 1.2),
                (4.8, 8.8), (8.4, 1.6), (8.8, 4.8), (8.2, 8.2)])]
    bob.append(down_stroke(3.1, 2.9, 2.1, BED, "bob", 40.0))
    # bob mistakes part of the table for generic furniture; the disputed
    # faces get a 1-1 vote split and uncertainty 1.0 while the rest of
    # the table keeps alice's single confident vote
    bob.append(down_stroke(7.4, 6.4, 1.2, FURNITURE, "bob", 41.0))
    return alice, bob


def look_at(eye, target):
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return CameraModel(fx=80.0, fy=80.0, cx=48.0, cy=36.0, width=96, height=72,
                       rotation=rotation, translation=-rotation @ eye)


def run(*args):
    rc = main([str(a) for a in args])
    if rc != 0:
        raise SystemExit(f"pipeline stage failed: {args[0]} (rc={rc})")


def main_script():
    if GOLDEN.exists():
        shutil.rmtree(GOLDEN)
    GOLDEN.mkdir(parents=True)
    frames_dir = GOLDEN / "frames"

    mesh, gt_labels = build_scene()
    save_mesh(mesh, DEMO / "scene.ply")
    gt = LabelMap("scene", "face",
                  {i: int(l) for i, l in enumerate(gt_labels)},
                  num_elements=mesh.num_faces)
    save_label_map(gt, DEMO / "gt.labels.csv")

    alice, bob = annotator_strokes()
    save_stroke_log(alice, DEMO / "strokes-a.jsonl")
    save_stroke_log(bob, DEMO / "strokes-b.jsonl")

    cams = [look_at([5.0, 5.0, 14.0], [5.0, 5.001, 0.0]),
            look_at([12.0, -3.0, 8.0], [5.0, 5.0, 0.0])]
    save_trajectory([TrajectoryFrame(i, c) for i, c in enumerate(cams)],
                    DEMO / "trajectory.jsonl")

    work = DEMO / "work"
    if work.exists():
        shutil.rmtree(work)
    run("preprocess", DEMO / "scene.ply", "--out", work, "--cell-size", "4")
    shutil.copy2(work / "chunks" / "index.json", GOLDEN / "chunk-index.json")

    run("label-replay", "--mesh", DEMO / "scene.ply", "--chunks", work,
        "--strokes", DEMO / "strokes-a.jsonl",
        "--out", GOLDEN / "a.labels.csv")
    run("label-replay", "--mesh", DEMO / "scene.ply", "--chunks", work,
        "--strokes", DEMO / "strokes-b.jsonl",
        "--out", GOLDEN / "b.labels.csv")
    run("fuse", GOLDEN / "a.labels.csv", GOLDEN / "b.labels.csv",
        "--annotators", "alice,bob", "--out", GOLDEN / "fused.labels.csv")
    run("uncert", GOLDEN / "a.labels.csv", GOLDEN / "b.labels.csv",
        "--annotators", "alice,bob", "--out", GOLDEN / "fused.uncert.csv")
    run("fill", "--labels", GOLDEN / "fused.labels.csv",
        "--mesh", DEMO / "scene.ply", "--out", GOLDEN / "filled.labels.csv")
    run("render", "--mesh", DEMO / "scene.ply",
        "--labels", GOLDEN / "filled.labels.csv",
        "--uncert", GOLDEN / "fused.uncert.csv",
        "--trajectory", DEMO / "trajectory.jsonl",
        "--out", frames_dir, "--color-preview")
    run("score", "--gt", DEMO / "gt.labels.csv",
        "--pred", GOLDEN / "filled.labels.csv",
        "--mesh", DEMO / "scene.ply", "--out", GOLDEN / "report.json")

    shutil.rmtree(work)
    print("demo inputs and golden outputs rewritten under", DEMO)


if __name__ == "__main__":
    main_script()
