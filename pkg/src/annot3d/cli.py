"""Command line driver for the labeling pipeline.

Each subcommand wraps one stage so the whole flow runs from files alone:

    annot3d preprocess scene.ply --out work/
    annot3d label-replay --mesh scene.ply --chunks work --strokes log.jsonl \
        --out alice.labels.csv
    annot3d fuse alice.labels.csv bob.labels.csv --out fused.labels.csv
    annot3d uncert alice.labels.csv bob.labels.csv --out fused.uncert.csv
    annot3d fill --labels fused.labels.csv --mesh scene.ply --out filled.labels.csv
    annot3d render --mesh scene.ply --labels filled.labels.csv \
        --trajectory traj.jsonl --out frames/
    annot3d score --gt gt.labels.csv --pred filled.labels.csv --mesh scene.ply

Flags may also come from a JSON file via --config (explicit flags win).
Errors print a single machine-parsable line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .chunks import (DEFAULT_CELL_SIZE, DEFAULT_LOD_RATIOS, DEFAULT_MIN_POINTS,
                     DEFAULT_VOXEL_STEP, PreprocessConfig, load_chunkset,
                     save_chunkset, split_chunks)
from .errors import SceneError, ValidationError
from .fill import WEIGHTING_RULES, FillConfig, fill_unlabeled, fill_with_uncertainty
from .fusion import integrate, load_uncertainty, save_uncertainty, uncertainty
from .labels import (VOID_LABEL, AnnotationSet, LabelMap, default_taxonomy,
                     load_label_map, save_label_map)
from .mesh import face_areas, face_centroids
from .meshio import load_cloud, load_mesh
from .metrics import format_table, mean_iou, sweep_to_csv, uncertainty_sweep, unit_areas
from .render2d import render_batch
from .session import SessionScene, load_stroke_log, make_voxel_scene, replay
from .voxel import load_grid, save_grid, voxel_cube_mesh, voxelize


def _floats_arg(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {text!r}")


def _preprocess_config(args) -> PreprocessConfig:
    ratios = args.lod_ratios
    if isinstance(ratios, str):
        ratios = _floats_arg(ratios)
    return PreprocessConfig(cell_size=args.cell_size, lod_ratios=tuple(ratios),
                            voxel_step=getattr(args, "step", DEFAULT_VOXEL_STEP),
                            min_points=getattr(args, "min_points", DEFAULT_MIN_POINTS))


def _load_scene(args) -> SessionScene:
    """Scene for replay/fill/render paths: a mesh with chunks, or a grid."""
    if getattr(args, "grid", None):
        grid = load_grid(args.grid)
        cfg = PreprocessConfig(cell_size=args.cell_size)
        return make_voxel_scene(args.scene_id or Path(args.grid).name, grid, cfg)
    if not getattr(args, "mesh", None):
        raise ValidationError("need either --mesh or --grid")
    mesh = load_mesh(args.mesh)
    if getattr(args, "chunks", None):
        chunk_set = load_chunkset(args.chunks)
        return SessionScene(chunk_set.scene_id, mesh, chunk_set)
    scene_id = args.scene_id or Path(args.mesh).stem
    cfg = PreprocessConfig(cell_size=args.cell_size)
    return SessionScene(scene_id, mesh, split_chunks(mesh, cfg, scene_id))


def _positions_and_areas(args, label_map: LabelMap):
    """(positions, areas, area_source) for the map's element kind."""
    if getattr(args, "grid", None):
        grid = load_grid(args.grid)
        if label_map.kind != "voxel":
            raise ValidationError(f"--grid given but map kind is '{label_map.kind}'")
        return grid.voxel_centers(), unit_areas(grid.num_occupied), "unit-counts"
    if getattr(args, "mesh", None):
        mesh = load_mesh(args.mesh)
        if label_map.kind != "face":
            raise ValidationError(f"--mesh given but map kind is '{label_map.kind}'")
        return face_centroids(mesh), face_areas(mesh), "face-areas"
    raise ValidationError("need either --mesh or --grid")


def _areas_only(args, *maps):
    if getattr(args, "mesh", None):
        return face_areas(load_mesh(args.mesh)), "face-areas"
    if getattr(args, "unit_areas", False):
        n = next((m.num_elements for m in maps if m.num_elements is not None), None)
        if n is None:
            raise ValidationError(
                "--unit-areas needs an element count; none of the label "
                "files records one")
        return unit_areas(n), "unit-counts"
    raise ValidationError("need --mesh (face areas) or --unit-areas")


# -- subcommands -----------------------------------------------------------


def cmd_preprocess(args) -> int:
    mesh = load_mesh(args.input)
    scene_id = args.scene_id or Path(args.input).stem
    chunk_set = split_chunks(mesh, _preprocess_config(args), scene_id)
    save_chunkset(chunk_set, args.out)
    print(f"scene={scene_id} faces={mesh.num_faces} "
          f"chunks={len(chunk_set.chunks)} out={args.out}")
    return 0


def cmd_voxelize(args) -> int:
    cloud = load_cloud(args.input)
    grid = voxelize(cloud, args.step, args.min_points)
    save_grid(grid, args.out)
    print(f"points={cloud.num_points} voxels={grid.num_occupied} "
          f"dims={'x'.join(str(d) for d in grid.dims.tolist())} out={args.out}")
    return 0


def cmd_label_replay(args) -> int:
    scene = _load_scene(args)
    strokes = load_stroke_log(args.strokes)
    initial = load_label_map(args.initial) if args.initial else None
    session = replay(strokes, scene, initial=initial, cross_chunk=args.cross_chunk)
    exported = session.export()
    save_label_map(exported, args.out)
    print(f"strokes={len(strokes)} labeled={len(exported.labels)} "
          f"progress={session.progress():.1f}% out={args.out}")
    return 0


def _load_annotation_set(paths: List[str], annotators: Optional[str]) -> AnnotationSet:
    maps = [load_label_map(p) for p in paths]
    if annotators:
        names = [a.strip() for a in annotators.split(",")]
        if len(names) != len(maps):
            raise ValidationError(
                f"{len(names)} annotator names for {len(maps)} label files")
    else:
        names = [Path(p).name.replace(".labels.csv", "") for p in paths]
    return AnnotationSet.from_maps(maps, names)


def cmd_fuse(args) -> int:
    aset = _load_annotation_set(args.inputs, args.annotators)
    fused = integrate(aset)
    save_label_map(fused, args.out)
    print(f"annotators={aset.n} labeled={len(fused.labels)} out={args.out}")
    return 0


def cmd_uncert(args) -> int:
    aset = _load_annotation_set(args.inputs, args.annotators)
    umap = uncertainty(aset)
    save_uncertainty(umap, args.out)
    values = [e.u for e in umap.entries.values()]
    mean_u = float(np.mean(values)) if values else 0.0
    print(f"annotators={aset.n} elements={len(umap.entries)} "
          f"mean_u={mean_u:.4f} out={args.out}")
    return 0


def cmd_fill(args) -> int:
    label_map = load_label_map(args.labels)
    positions, _, _ = _positions_and_areas(args, label_map)
    config = FillConfig(k=args.k, th_u=args.th_u, weighting=args.weighting)
    if config.th_u is not None:
        if not args.uncert:
            raise ValidationError("--th-u needs --uncert with the uncertainty file")
        umap = load_uncertainty(args.uncert)
        filled = fill_with_uncertainty(label_map, umap, positions, config)
    else:
        filled = fill_unlabeled(label_map, positions, config)
    save_label_map(filled, args.out)
    print(f"labeled={len(label_map.labels)} filled={len(filled.labels)} "
          f"out={args.out}")
    return 0


def cmd_render(args) -> int:
    label_map = load_label_map(args.labels)
    umap = load_uncertainty(args.uncert) if args.uncert else None
    if args.grid:
        grid = load_grid(args.grid)
        if label_map.kind != "voxel":
            raise ValidationError(f"--grid given but map kind is '{label_map.kind}'")
        mesh, face_to_voxel = voxel_cube_mesh(grid)
        dense = label_map.to_array(grid.num_occupied)[face_to_voxel]
        face_map = LabelMap.from_array(label_map.scene_id, "face", dense)
        face_u = None
        if umap is not None:
            entries = {f: umap.entries[int(v)] for f, v in enumerate(face_to_voxel)
                       if int(v) in umap.entries}
            from .fusion import UncertaintyMap
            face_u = UncertaintyMap(label_map.scene_id, "face", entries)
        label_map, umap = face_map, face_u
    else:
        if not args.mesh:
            raise ValidationError("need either --mesh or --grid")
        mesh = load_mesh(args.mesh)
    report = render_batch(mesh, label_map, args.trajectory, args.out,
                          uncertainty=umap, taxonomy=default_taxonomy(),
                          color_preview=args.color_preview, threads=args.threads)
    for line in report.skipped:
        print(f"skipped {line}", file=sys.stderr)
    print(f"frames={report.num_frames} files={len(report.written)} "
          f"skipped={len(report.skipped)} out={args.out}")
    return 0


def cmd_score(args) -> int:
    gt = load_label_map(args.gt)
    pred = load_label_map(args.pred)
    areas, source = _areas_only(args, gt, pred)
    report = mean_iou(gt, pred, areas, area_source=source)
    print(format_table(report))
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
        print(f"report={args.out}")
    return 0


def cmd_sweep(args) -> int:
    gt = load_label_map(args.gt)
    pred = load_label_map(args.pred)
    umap = load_uncertainty(args.uncert)
    areas, source = _areas_only(args, gt, pred)
    rows = uncertainty_sweep(gt, pred, umap, areas, args.th, area_source=source)
    csv_text = sweep_to_csv(rows)
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"rows={len(rows)} out={args.out}")
    else:
        print(csv_text, end="")
    return 0


def cmd_simulate_annotators(args) -> int:
    gt = load_label_map(args.gt)
    if not gt.labels:
        raise ValidationError("ground truth has no labeled elements to perturb")
    if not (0.0 <= args.p <= 1.0):
        raise ValidationError(f"accuracy p must be in [0, 1], got {args.p}")
    taxonomy = default_taxonomy()
    class_ids = [c.id for c in taxonomy.classes if c.id != VOID_LABEL]
    rng = np.random.default_rng(args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    element_ids = sorted(gt.labels)
    written = []
    for j in range(args.n):
        noisy = {}
        for e in element_ids:
            true = gt.labels[e]
            if rng.random() < args.p:
                noisy[e] = true
            else:
                others = [c for c in class_ids if c != true]
                noisy[e] = others[int(rng.integers(len(others)))]
        out_map = LabelMap(gt.scene_id, gt.kind, noisy,
                           num_elements=gt.num_elements)
        path = out_dir / f"{args.prefix}-{j:02d}.labels.csv"
        save_label_map(out_map, path, taxonomy)
        written.append(path)
    print(f"annotators={args.n} p={args.p} seed={args.seed} "
          f"out={' '.join(str(p) for p in written)}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(args.data_dir, workers=args.threads)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# -- parser ------------------------------------------------------------------


def build_parser(overrides: Optional[dict] = None) -> argparse.ArgumentParser:
    """Assemble the argument parser.

    `overrides` (from --config) become parser defaults on every
    subcommand, so explicit flags still win but JSON values beat the
    built-in defaults. Subparsers parse into their own namespace, which
    is why the defaults must be pushed onto each one rather than onto
    the root parser alone.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="JSON",
                        help="JSON file of flag defaults (explicit flags win)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads; results are identical for any value")

    parser = argparse.ArgumentParser(
        prog="annot3d", description="Batch pipeline for 3D semantic labeling.")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = []

    def add_parser(name, **kwargs):
        p = sub.add_parser(name, parents=[common], **kwargs)
        subparsers.append(p)
        return p

    p = add_parser("preprocess",
                   help="split a mesh into chunks with LOD levels")
    p.add_argument("input", help="mesh file (PLY or OBJ)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scene-id", default=None)
    p.add_argument("--cell-size", type=float, default=DEFAULT_CELL_SIZE)
    p.add_argument("--lod-ratios", default=",".join(str(r) for r in DEFAULT_LOD_RATIOS),
                   help="comma-separated keep ratios, e.g. 1.0,0.3,0.1")
    p.set_defaults(func=cmd_preprocess)

    p = add_parser("voxelize",
                       help="bin a point cloud into an occupancy grid")
    p.add_argument("input", help="point cloud file (PLY)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--step", type=float, default=DEFAULT_VOXEL_STEP)
    p.add_argument("--min-points", type=int, default=DEFAULT_MIN_POINTS)
    p.set_defaults(func=cmd_voxelize)

    p = add_parser("label-replay",
                       help="replay a stroke log into a label map")
    p.add_argument("--strokes", required=True, help="stroke log (JSON Lines)")
    p.add_argument("--out", required=True, help="output .labels.csv")
    p.add_argument("--mesh", default=None, help="scene mesh (PLY or OBJ)")
    p.add_argument("--chunks", default=None,
                   help="preprocessed chunk directory (else chunks are rebuilt)")
    p.add_argument("--grid", default=None, help="voxel grid directory")
    p.add_argument("--scene-id", default=None)
    p.add_argument("--cell-size", type=float, default=DEFAULT_CELL_SIZE)
    p.add_argument("--initial", default=None, help="starting .labels.csv")
    p.add_argument("--cross-chunk", action="store_true",
                   help="let strokes spill into the 26 neighboring cells")
    p.set_defaults(func=cmd_label_replay)

    p = add_parser("fuse",
                       help="majority-vote several annotators' label maps")
    p.add_argument("inputs", nargs="+", help=".labels.csv files, one per annotator")
    p.add_argument("--out", required=True)
    p.add_argument("--annotators", default=None, help="comma-separated names")
    p.set_defaults(func=cmd_fuse)

    p = add_parser("uncert",
                       help="per-element vote entropy of several annotators")
    p.add_argument("inputs", nargs="+", help=".labels.csv files, one per annotator")
    p.add_argument("--out", required=True)
    p.add_argument("--annotators", default=None)
    p.set_defaults(func=cmd_uncert)

    p = add_parser("fill",
                       help="K-nearest-neighbor completion of a partial map")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mesh", default=None)
    p.add_argument("--grid", default=None)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--th-u", type=float, default=None,
                   help="re-label elements whose uncertainty exceeds this")
    p.add_argument("--uncert", default=None, help=".uncert.csv (needed with --th-u)")
    p.add_argument("--weighting", default="confidence", choices=WEIGHTING_RULES)
    p.set_defaults(func=cmd_fill)

    p = add_parser("render",
                       help="project a label map along a camera trajectory")
    p.add_argument("--labels", required=True)
    p.add_argument("--trajectory", required=True, help="trajectory JSON Lines")
    p.add_argument("--out", required=True, help="output directory for PNG pairs")
    p.add_argument("--mesh", default=None)
    p.add_argument("--grid", default=None)
    p.add_argument("--uncert", default=None)
    p.add_argument("--color-preview", action="store_true")
    p.set_defaults(func=cmd_render)

    p = add_parser("score",
                       help="area-weighted IoU of a prediction against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--mesh", default=None, help="mesh for face areas")
    p.add_argument("--unit-areas", action="store_true",
                   help="weight every element equally (voxels, points)")
    p.add_argument("--out", default=None, help="also write the report as JSON")
    p.set_defaults(func=cmd_score)

    p = add_parser("sweep",
                       help="mIoU/Perc.Area over uncertainty thresholds")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--uncert", required=True)
    p.add_argument("--th", type=_floats_arg, required=True,
                   help="comma-separated thresholds, e.g. 0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--mesh", default=None)
    p.add_argument("--unit-areas", action="store_true")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = add_parser("simulate-annotators",
                       help="derive noisy annotator maps from ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--n", type=int, required=True, help="number of annotators")
    p.add_argument("--p", type=float, required=True,
                   help="per-element probability of copying the true label")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="annotator")
    p.set_defaults(func=cmd_simulate_annotators)

    p = add_parser("serve",
                       help="run the HTTP service over a data directory")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=cmd_serve)

    if overrides:
        safe = {k: v for k, v in overrides.items()
                if k not in ("func", "command")}
        for target in [parser] + subparsers:
            target.set_defaults(**safe)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)

    overrides = None
    if known.config:
        try:
            raw = json.loads(Path(known.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            print(f"error: ConfigError: cannot read --config {known.config}: {e}",
                  file=sys.stderr)
            return 2
        if not isinstance(raw, dict):
            print("error: ConfigError: --config must hold a JSON object",
                  file=sys.stderr)
            return 2
        overrides = {k.replace("-", "_"): v for k, v in raw.items()}

    parser = build_parser(overrides)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SceneError, OSError, json.JSONDecodeError) as e:
        message = str(e).replace("\n", "; ")
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
