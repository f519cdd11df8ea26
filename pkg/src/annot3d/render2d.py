"""Project per-face labels into 2D label images.

Two independent paths produce the same picture: `rasterize` is the fast
z-buffer renderer (pixel-center sampling, top-left tie rule, depth from
perspective-correct 1/z interpolation), and `raycast_reference` casts one
ray per pixel and keeps the nearest hit. They share no coverage or depth
code, so one checks the other.

Images store the label id in a 16-bit raster and the per-face
uncertainty in a second 16-bit raster quantized so 65535 means 1.0.
Background pixels are label 0 with uncertainty 0.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from PIL import Image

from .camera import CameraModel, load_trajectory
from .errors import FormatError, ValidationError
from .fusion import UncertaintyMap
from .labels import LabelMap, LabelTaxonomy
from .mesh import TriangleMesh
from .session import raycast_faces

NEAR_PLANE = 1e-4
U_SCALE = 65535


@dataclass(frozen=True)
class LabelImage:
    """Rendered label raster plus its uncertainty raster, both uint16."""

    labels: np.ndarray
    uncert: np.ndarray

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.uint16)
        unc = np.ascontiguousarray(self.uncert, dtype=np.uint16)
        if lab.ndim != 2 or lab.shape != unc.shape:
            raise ValidationError("label and uncertainty rasters must share a 2D shape")
        lab.setflags(write=False)
        unc.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "uncert", unc)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def uncertainty_float(self) -> np.ndarray:
        return self.uncert.astype(np.float64) / U_SCALE


def _check_face_attrs(mesh: TriangleMesh, labels, uncertainty,
                      taxonomy: Optional[LabelTaxonomy]):
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    if lab.shape != (mesh.num_faces,):
        raise ValidationError(
            f"need one label per face: got {lab.shape[0]} for {mesh.num_faces} faces")
    if lab.min(initial=0) < 0 or lab.max(initial=0) > U_SCALE:
        raise ValidationError("face labels must fit a 16-bit raster")
    if taxonomy is not None:
        for value in np.unique(lab):
            if not taxonomy.has(int(value)):
                raise ValidationError(f"label id {int(value)} is not in the taxonomy")
    if uncertainty is None:
        u = np.zeros(mesh.num_faces)
    else:
        u = np.asarray(uncertainty, dtype=np.float64).reshape(-1)
        if u.shape != (mesh.num_faces,):
            raise ValidationError("need one uncertainty value per face")
        if not np.isfinite(u).all() or u.min(initial=0.0) < 0 or u.max(initial=0.0) > 1.0:
            raise ValidationError("face uncertainties must lie in [0, 1]")
    return lab, u


def _compose(face_ids: np.ndarray, lab: np.ndarray, u: np.ndarray) -> LabelImage:
    covered = face_ids >= 0
    if lab.size == 0:
        zero = np.zeros(face_ids.shape, dtype=np.uint16)
        return LabelImage(labels=zero, uncert=zero.copy())
    safe = np.where(covered, face_ids, 0)
    labels = np.where(covered, lab[safe], 0).astype(np.uint16)
    uncert = np.where(covered, np.round(u[safe] * U_SCALE), 0).astype(np.uint16)
    return LabelImage(labels=labels, uncert=uncert)


def _accept_edge(e: np.ndarray, dx: float, dy: float) -> np.ndarray:
    # Top-left fill rule: a pixel center exactly on an edge belongs to
    # the triangle only when that edge is a top edge (horizontal with
    # the interior below it) or a left edge (winding upward on screen).
    top_left = (dy == 0.0 and dx > 0.0) or dy < 0.0
    if top_left:
        return e >= 0.0
    return e > 0.0


def _face_id_raster(mesh: TriangleMesh, camera: CameraModel,
                    near: float = NEAR_PLANE) -> np.ndarray:
    """Front-most face id per pixel (-1 where nothing is drawn)."""
    h, w = camera.height, camera.width
    face_ids = np.full((h, w), -1, dtype=np.int64)
    depth = np.full((h, w), np.inf)
    if mesh.is_empty():
        return face_ids

    cam = camera.world_to_camera(mesh.vertices)
    z = cam[:, 2]
    keep = (z[mesh.faces] >= near).all(axis=1)
    if not keep.any():
        return face_ids
    with np.errstate(divide="ignore", invalid="ignore"):
        px = camera.fx * cam[:, 0] / z + camera.cx
        py = camera.fy * cam[:, 1] / z + camera.cy
    inv_z = np.where(z > 0, 1.0 / np.where(z > 0, z, 1.0), 0.0)

    for f in np.nonzero(keep)[0]:
        i0, i1, i2 = mesh.faces[f]
        x0, y0, x1, y1, x2, y2 = px[i0], py[i0], px[i1], py[i1], px[i2], py[i2]
        iz0, iz1, iz2 = inv_z[i0], inv_z[i1], inv_z[i2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        if area < 0.0:
            x1, y1, x2, y2 = x2, y2, x1, y1
            iz1, iz2 = iz2, iz1
            area = -area

        ix0 = max(0, int(math.ceil(min(x0, x1, x2) - 0.5)))
        ix1 = min(w - 1, int(math.floor(max(x0, x1, x2) - 0.5)))
        iy0 = max(0, int(math.ceil(min(y0, y1, y2) - 0.5)))
        iy1 = min(h - 1, int(math.floor(max(y0, y1, y2) - 0.5)))
        if ix0 > ix1 or iy0 > iy1:
            continue
        cxs = np.arange(ix0, ix1 + 1) + 0.5
        cys = np.arange(iy0, iy1 + 1) + 0.5
        gx, gy = np.meshgrid(cxs, cys)

        e01 = (x1 - x0) * (gy - y0) - (y1 - y0) * (gx - x0)
        e12 = (x2 - x1) * (gy - y1) - (y2 - y1) * (gx - x1)
        e20 = (x0 - x2) * (gy - y2) - (y0 - y2) * (gx - x2)
        cover = (_accept_edge(e01, x1 - x0, y1 - y0)
                 & _accept_edge(e12, x2 - x1, y2 - y1)
                 & _accept_edge(e20, x0 - x2, y0 - y2))
        if not cover.any():
            continue

        # Perspective-correct depth: 1/z is linear in screen space.
        pix_inv_z = (e12 * iz0 + e20 * iz1 + e01 * iz2) / area
        with np.errstate(divide="ignore"):
            pix_z = np.where(pix_inv_z > 0, 1.0 / np.where(pix_inv_z > 0, pix_inv_z, 1.0),
                             np.inf)
        window = (slice(iy0, iy1 + 1), slice(ix0, ix1 + 1))
        better = cover & (pix_z < depth[window])
        depth[window] = np.where(better, pix_z, depth[window])
        face_ids[window] = np.where(better, f, face_ids[window])
    return face_ids


def rasterize(mesh: TriangleMesh, labels, camera: CameraModel,
              uncertainty=None, taxonomy: Optional[LabelTaxonomy] = None,
              near: float = NEAR_PLANE) -> LabelImage:
    """Render per-face labels with a z-buffer over pixel centers.

    Faces with any vertex closer than the near plane are dropped whole.
    Depth ties go to the smaller face id.
    """
    lab, u = _check_face_attrs(mesh, labels, uncertainty, taxonomy)
    return _compose(_face_id_raster(mesh, camera, near), lab, u)


def raycast_reference(mesh: TriangleMesh, labels, camera: CameraModel,
                      uncertainty=None, taxonomy: Optional[LabelTaxonomy] = None,
                      near: float = NEAR_PLANE) -> LabelImage:
    """Slow per-pixel ray-cast renderer used to cross-check `rasterize`.

    Coverage and depth come from ray/triangle intersections, not from
    the z-buffer path, so the two implementations fail independently.
    """
    lab, u = _check_face_attrs(mesh, labels, uncertainty, taxonomy)
    h, w = camera.height, camera.width
    face_ids = np.full((h, w), -1, dtype=np.int64)
    if not mesh.is_empty():
        z = camera.world_to_camera(mesh.vertices)[:, 2]
        visible = np.nonzero((z[mesh.faces] >= near).all(axis=1))[0]
        if len(visible):
            sub = TriangleMesh(vertices=mesh.vertices, faces=mesh.faces[visible])
            for iy in range(h):
                for ix in range(w):
                    origin, direction = camera.pixel_ray(ix + 0.5, iy + 0.5)
                    hit = raycast_faces(sub, origin, direction)
                    if hit is not None:
                        face_ids[iy, ix] = visible[hit[0]]
    return _compose(face_ids, lab, u)


def edge_pixels(labels: np.ndarray) -> np.ndarray:
    """Pixels whose 4-neighborhood holds at least two distinct labels.

    Renderer comparisons ignore these: coverage at a boundary depends on
    sub-pixel rounding, so both sides of every label edge are excused.
    """
    lab = np.asarray(labels)
    h, w = lab.shape
    lo = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    hi = np.full((h, w), np.iinfo(np.int64).min, dtype=np.int64)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        src = (slice(max(0, dy), h + min(0, dy)), slice(max(0, dx), w + min(0, dx)))
        dst = (slice(max(0, -dy), h + min(0, -dy)), slice(max(0, -dx), w + min(0, -dx)))
        vals = lab[src].astype(np.int64)
        lo[dst] = np.minimum(lo[dst], vals)
        hi[dst] = np.maximum(hi[dst], vals)
    return hi > lo


def save_png16(array: np.ndarray, path: Union[str, Path]) -> None:
    a = np.ascontiguousarray(array, dtype=np.uint16)
    if a.ndim != 2:
        raise ValidationError("16-bit PNG output expects a 2D array")
    image = Image.frombytes("I;16", (a.shape[1], a.shape[0]),
                            a.astype("<u2").tobytes())
    image.save(str(path), format="PNG")


def load_png16(path: Union[str, Path]) -> np.ndarray:
    try:
        with Image.open(str(path)) as image:
            if image.mode not in ("I", "I;16", "I;16B", "L"):
                raise FormatError(f"not a 16-bit grayscale PNG: mode {image.mode}")
            arr = np.array(image)
    except FileNotFoundError:
        raise FormatError(f"missing image file: {path}")
    if arr.max(initial=0) > U_SCALE or arr.min(initial=0) < 0:
        raise FormatError("pixel values exceed the 16-bit range")
    return arr.astype(np.uint16)


def save_color_preview(labels: np.ndarray, taxonomy: LabelTaxonomy,
                       path: Union[str, Path]) -> None:
    palette = taxonomy.palette()
    lab = np.asarray(labels)
    if lab.max(initial=0) >= len(palette):
        raise ValidationError("label raster holds an id outside the taxonomy palette")
    Image.fromarray(palette[lab], mode="RGB").save(str(path), format="PNG")


@dataclass
class RenderReport:
    written: List[Path] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)
    num_frames: int = 0


def render_batch(mesh: TriangleMesh, label_map: LabelMap,
                 trajectory_path: Union[str, Path], out_dir: Union[str, Path],
                 uncertainty: Optional[UncertaintyMap] = None,
                 taxonomy: Optional[LabelTaxonomy] = None,
                 color_preview: bool = False, threads: int = 1) -> RenderReport:
    """Render every well-formed trajectory frame to image files.

    Writes `<frame>.labels.png` and `<frame>.uncert.png` (plus
    `<frame>.color.png` when a palette preview is requested) and reports
    trajectory rows it had to skip. Frames are independent, so any thread
    count yields byte-identical files.
    """
    if label_map.kind != "face":
        raise ValidationError(f"rendering needs a face label map, got {label_map.kind!r}")
    dense = label_map.to_array(mesh.num_faces)
    u_dense = np.zeros(mesh.num_faces)
    if uncertainty is not None:
        if uncertainty.kind != "face":
            raise ValidationError("uncertainty map element kind must be 'face'")
        for element_id, entry in uncertainty.entries.items():
            if element_id < mesh.num_faces:
                u_dense[element_id] = entry.u
    if color_preview and taxonomy is None:
        raise ValidationError("a color preview needs a taxonomy palette")

    frames, skipped = load_trajectory(trajectory_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = RenderReport(skipped=list(skipped))

    def render_one(frame) -> List[Path]:
        image = rasterize(mesh, dense, frame.camera, u_dense, taxonomy)
        base = out / f"{frame.frame_id:06d}"
        written = [Path(f"{base}.labels.png"), Path(f"{base}.uncert.png")]
        save_png16(image.labels, written[0])
        save_png16(image.uncert, written[1])
        if color_preview:
            color_path = Path(f"{base}.color.png")
            save_color_preview(image.labels, taxonomy, color_path)
            written.append(color_path)
        return written

    if threads > 1 and len(frames) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_frame = list(pool.map(render_one, frames))
    else:
        per_frame = [render_one(frame) for frame in frames]
    for written in per_frame:
        report.written.extend(written)
    report.num_frames = len(frames)
    return report
