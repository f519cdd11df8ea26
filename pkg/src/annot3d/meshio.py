"""PLY and OBJ readers plus a PLY writer.

PLY (ascii and binary_little_endian 1.0) is the canonical interchange
format; OBJ is accepted read-only. Vertices carry optional uchar RGB.
Internal storage is float64; files are written float32, so a float32
valued mesh round-trips bitwise. Degenerate faces (a repeated vertex
index) are dropped at load and counted in the returned report.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import FormatError
from .mesh import PointCloud, TriangleMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class LoadReport:
    """What the loader had to clean up or skip."""

    source_format: str = ""
    degenerate_faces: int = 0
    skipped_properties: list = field(default_factory=list)


@dataclass
class _Property:
    name: str
    dtype: str = ""            # numpy dtype code for scalar properties
    is_list: bool = False
    count_dtype: str = ""
    item_dtype: str = ""


@dataclass
class _Element:
    name: str
    count: int
    properties: list


def _parse_ply_header(data: bytes, path: str) -> Tuple[str, list, int]:
    """Returns (format, elements, body byte offset)."""
    end = data.find(b"end_header")
    if not data.startswith(b"ply"):
        raise FormatError(f"{path}: not a PLY file (missing 'ply' magic)", 0)
    if end < 0:
        raise FormatError(f"{path}: unterminated PLY header", len(data))
    nl = data.find(b"\n", end)
    if nl < 0:
        raise FormatError(f"{path}: no newline after end_header", end)
    body_offset = nl + 1
    header = data[:end].decode("ascii", errors="replace")

    fmt = ""
    elements: list = []
    offset = 0
    for line in header.splitlines():
        line_offset = offset
        offset += len(line.encode("ascii", errors="replace")) + 1
        tokens = line.strip().split()
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 3 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise FormatError(f"{path}: unsupported PLY format line '{line.strip()}'", line_offset)
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise FormatError(f"{path}: malformed element line '{line.strip()}'", line_offset)
            elements.append(_Element(tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before any element", line_offset)
            if tokens[1] == "list":
                if len(tokens) != 5 or tokens[2] not in _PLY_TYPES or tokens[3] not in _PLY_TYPES:
                    raise FormatError(f"{path}: malformed list property '{line.strip()}'", line_offset)
                elements[-1].properties.append(
                    _Property(tokens[4], is_list=True,
                              count_dtype=_PLY_TYPES[tokens[2]], item_dtype=_PLY_TYPES[tokens[3]]))
            else:
                if len(tokens) != 3 or tokens[1] not in _PLY_TYPES:
                    raise FormatError(f"{path}: malformed property '{line.strip()}'", line_offset)
                elements[-1].properties.append(_Property(tokens[2], dtype=_PLY_TYPES[tokens[1]]))
    if not fmt:
        raise FormatError(f"{path}: PLY header has no format line", 0)
    return fmt, elements, body_offset


def _ascii_records(data: bytes, body_offset: int, total: int, path: str):
    """Yields (tokens, byte_offset) for each non-blank body line."""
    pos = body_offset
    n = 0
    body = data[body_offset:]
    for raw in body.split(b"\n"):
        line_offset = pos
        pos += len(raw) + 1
        line = raw.strip()
        if not line:
            continue
        yield line.split(), line_offset
        n += 1
        if n >= total:
            return
    if n < total:
        raise FormatError(f"{path}: body truncated, expected {total} records, got {n}", len(data))


def _extract_vertex_arrays(names, columns, path):
    """columns: mapping property name -> 1D array."""
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise FormatError(f"{path}: vertex element lacks '{axis}' property")
    pts = np.column_stack([columns["x"], columns["y"], columns["z"]]).astype(np.float64)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.column_stack([columns["red"], columns["green"], columns["blue"]])
        colors = np.clip(colors, 0, 255).astype(np.uint8)
    return pts, colors


def _read_ply(data: bytes, path: str, report: LoadReport):
    fmt, elements, body_offset = _parse_ply_header(data, path)
    report.source_format = f"ply/{fmt}"
    vertices = None
    colors = None
    faces = np.zeros((0, 3), dtype=np.int64)

    if fmt == "ascii":
        text_records = _ascii_records(data, body_offset, sum(e.count for e in elements), path)
        for elem in elements:
            names = [p.name for p in elem.properties]
            if elem.name == "vertex":
                if any(p.is_list for p in elem.properties):
                    raise FormatError(f"{path}: list property on vertex element is unsupported")
                rows = np.empty((elem.count, len(names)), dtype=np.float64)
                for i in range(elem.count):
                    tokens, off = next(text_records)
                    if len(tokens) < len(names):
                        raise FormatError(f"{path}: vertex record has too few values", off)
                    try:
                        rows[i] = [float(t) for t in tokens[: len(names)]]
                    except ValueError:
                        raise FormatError(f"{path}: non-numeric vertex value", off) from None
                # Honor each property's declared width so that float32 files
                # round-trip exactly through ascii.
                columns = {p.name: rows[:, j].astype(np.dtype(p.dtype))
                           for j, p in enumerate(elem.properties)}
                vertices, colors = _extract_vertex_arrays(names, columns, path)
            elif elem.name == "face":
                face_rows = np.empty((elem.count, 3), dtype=np.int64)
                for i in range(elem.count):
                    tokens, off = next(text_records)
                    try:
                        cnt = int(tokens[0])
                        idx = [int(t) for t in tokens[1 : 1 + cnt]]
                    except (ValueError, IndexError):
                        raise FormatError(f"{path}: malformed face record", off) from None
                    if cnt != 3 or len(idx) != 3:
                        raise FormatError(f"{path}: only triangle faces are supported (got {cnt}-gon)", off)
                    face_rows[i] = idx
                faces = face_rows
            else:
                report.skipped_properties.append(elem.name)
                for _ in range(elem.count):
                    next(text_records)
    else:
        pos = body_offset
        for elem in elements:
            if elem.name == "vertex":
                if any(p.is_list for p in elem.properties):
                    raise FormatError(f"{path}: list property on vertex element is unsupported", pos)
                dt = np.dtype([(p.name, "<" + p.dtype) for p in elem.properties])
                nbytes = dt.itemsize * elem.count
                if pos + nbytes > len(data):
                    raise FormatError(f"{path}: vertex data truncated", len(data))
                rec = np.frombuffer(data, dtype=dt, count=elem.count, offset=pos)
                pos += nbytes
                names = [p.name for p in elem.properties]
                columns = {n: rec[n] for n in names}
                vertices, colors = _extract_vertex_arrays(names, columns, path)
            elif elem.name == "face":
                lists = [p for p in elem.properties if p.is_list]
                if len(lists) != 1 or len(elem.properties) != 1:
                    raise FormatError(f"{path}: face element must have exactly one list property", pos)
                prop = lists[0]
                cdt = np.dtype("<" + prop.count_dtype)
                idt = np.dtype("<" + prop.item_dtype)
                rec_dt = np.dtype([("n", cdt), ("v", idt, (3,))])
                nbytes = rec_dt.itemsize * elem.count
                if pos + nbytes > len(data):
                    raise FormatError(f"{path}: face data truncated", len(data))
                rec = np.frombuffer(data, dtype=rec_dt, count=elem.count, offset=pos)
                bad = np.nonzero(rec["n"] != 3)[0]
                if len(bad):
                    off = pos + int(bad[0]) * rec_dt.itemsize
                    raise FormatError(
                        f"{path}: only triangle faces are supported (got {int(rec['n'][bad[0]])}-gon)", off)
                faces = rec["v"].astype(np.int64)
                pos += nbytes
            else:
                # Skip an unknown element; possible only when it is scalar-typed.
                if any(p.is_list for p in elem.properties):
                    raise FormatError(f"{path}: cannot skip unknown list element '{elem.name}'", pos)
                dt = np.dtype([(p.name, "<" + p.dtype) for p in elem.properties])
                report.skipped_properties.append(elem.name)
                pos += dt.itemsize * elem.count

    if vertices is None:
        raise FormatError(f"{path}: PLY file has no vertex element")
    return vertices, colors, faces, body_offset


def _read_obj(data: bytes, path: str, report: LoadReport):
    report.source_format = "obj"
    verts = []
    vert_colors = []
    faces = []
    pos = 0
    for raw in data.split(b"\n"):
        line_offset = pos
        pos += len(raw) + 1
        line = raw.strip()
        if not line or line.startswith(b"#"):
            continue
        tokens = line.decode("ascii", errors="replace").split()
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise FormatError(f"{path}: malformed vertex line", line_offset)
            try:
                values = [float(t) for t in tokens[1:]]
            except ValueError:
                raise FormatError(f"{path}: non-numeric vertex value", line_offset) from None
            verts.append(values[:3])
            if len(values) >= 6:
                vert_colors.append(values[3:6])
        elif tokens[0] == "f":
            try:
                idx = [int(t.split("/")[0]) for t in tokens[1:]]
            except ValueError:
                raise FormatError(f"{path}: malformed face line", line_offset) from None
            if len(idx) < 3:
                raise FormatError(f"{path}: face with fewer than 3 vertices", line_offset)
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            # Fan-triangulate polygons.
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    colors = None
    if len(vert_colors) == len(verts) and verts:
        colors = np.clip(np.asarray(vert_colors) * 255.0, 0, 255).astype(np.uint8)
    face_arr = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    return vertices, colors, face_arr, 0


def _drop_degenerate(faces: np.ndarray, report: LoadReport) -> np.ndarray:
    if len(faces) == 0:
        return faces
    f = faces
    bad = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    report.degenerate_faces = int(bad.sum())
    return faces[~bad]


def _detect_format(path: Union[str, Path], format: Optional[str]) -> str:
    if format is not None:
        fmt = format.lower()
        if fmt not in ("ply", "obj"):
            raise FormatError(f"unknown mesh format '{format}'")
        return fmt
    ext = Path(path).suffix.lower()
    if ext == ".obj":
        return "obj"
    return "ply"


def _read_file(path: Union[str, Path]) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read '{path}': {e.strerror or e}") from e


def load_mesh(path: Union[str, Path], format: Optional[str] = None,
              return_report: bool = False):
    """Load a triangle mesh from a PLY or OBJ file.

    Out-of-range face indices are fatal; degenerate faces are dropped and
    counted in the report. Pass return_report=True to also get the
    LoadReport.
    """
    data = _read_file(path)
    report = LoadReport()
    fmt = _detect_format(path, format)
    if fmt == "obj":
        vertices, colors, faces, _ = _read_obj(data, str(path), report)
    else:
        vertices, colors, faces, _ = _read_ply(data, str(path), report)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise FormatError(f"{path}: face index out of range")
    faces = _drop_degenerate(faces, report)
    mesh = TriangleMesh(vertices, faces, colors)
    if return_report:
        return mesh, report
    return mesh


def load_cloud(path: Union[str, Path], format: Optional[str] = None,
               return_report: bool = False):
    """Load a point cloud (vertex-only PLY, or any PLY ignoring faces)."""
    data = _read_file(path)
    report = LoadReport()
    fmt = _detect_format(path, format)
    if fmt == "obj":
        vertices, colors, _, _ = _read_obj(data, str(path), report)
    else:
        vertices, colors, _, _ = _read_ply(data, str(path), report)
    cloud = PointCloud(vertices, colors)
    if return_report:
        return cloud, report
    return cloud


def _ply_header(num_vertices: int, num_faces: int, has_colors: bool, binary: bool) -> bytes:
    lines = ["ply"]
    lines.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    lines.append(f"element vertex {num_vertices}")
    lines += ["property float x", "property float y", "property float z"]
    if has_colors:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    if num_faces >= 0:
        lines.append(f"element face {num_faces}")
        lines.append("property list uchar int vertex_indices")
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def _write_ply(path, vertices, colors, faces, binary: bool):
    num_faces = -1 if faces is None else len(faces)
    header = _ply_header(len(vertices), num_faces, colors is not None, binary)
    v32 = vertices.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            if colors is not None:
                dt = np.dtype([("xyz", "<f4", (3,)), ("rgb", "u1", (3,))])
                rec = np.empty(len(v32), dtype=dt)
                rec["xyz"] = v32
                rec["rgb"] = colors
                fh.write(rec.tobytes())
            else:
                fh.write(v32.astype("<f4").tobytes())
            if faces is not None and len(faces):
                fdt = np.dtype([("n", "u1"), ("v", "<i4", (3,))])
                frec = np.empty(len(faces), dtype=fdt)
                frec["n"] = 3
                frec["v"] = faces.astype(np.int32)
                fh.write(frec.tobytes())
        else:
            # %.9g preserves every float32 value exactly.
            for i in range(len(v32)):
                coords = " ".join("%.9g" % c for c in v32[i])
                if colors is not None:
                    coords += " " + " ".join(str(int(c)) for c in colors[i])
                fh.write((coords + "\n").encode("ascii"))
            if faces is not None:
                for f in faces:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


def save_mesh(mesh: TriangleMesh, path: Union[str, Path], binary: bool = True) -> None:
    """Write a mesh as PLY (float32 coordinates, int32 face indices)."""
    _write_ply(path, mesh.vertices, mesh.colors, mesh.faces, binary)


def save_cloud(cloud: PointCloud, path: Union[str, Path], binary: bool = True) -> None:
    """Write a point cloud as a vertex-only PLY."""
    _write_ply(path, cloud.points, cloud.colors, None, binary)
