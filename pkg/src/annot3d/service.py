"""HTTP service around the labeling pipeline.

Small FastAPI app exposing scene preprocessing, paint sessions, and the
batch jobs (fusion, fill, render, score) over JSON. All state lives under
one data directory so a restarted server rebuilds every session by
replaying its stroke log:

    data/scenes/<id>/   source file, scene.json, chunks/, grid/
    data/sessions/<id>/ session.json, strokes.jsonl
    data/jobs/<id>/     job.json plus output artifacts

Sessions use optimistic sequence numbers: a stroke must carry the next
seq (starting at 1) or the request is rejected with 409 and the client
refetches. Jobs are content-addressed: the job id is a hash of the
resolved inputs, so resubmitting identical work returns the cached
artifacts instead of recomputing.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
from fastapi import Body, FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, Response

from .chunks import PreprocessConfig, load_chunkset, save_chunkset, split_chunks
from .errors import RayMissError, SceneError, ValidationError
from .fill import FillConfig, fill_unlabeled, fill_with_uncertainty
from .fusion import (UncertaintyEntry, UncertaintyMap, integrate, load_uncertainty,
                     save_uncertainty, uncertainty)
from .labels import (AnnotationSet, LabelMap, default_taxonomy, load_label_map,
                     save_label_map)
from .mesh import face_areas, face_centroids
from .meshio import load_cloud, load_mesh
from .metrics import format_table, mean_iou
from .render2d import render_batch
from .session import (Session, SessionScene, Stroke, load_stroke_log,
                      make_voxel_scene, replay)
from .voxel import load_grid, save_grid, voxelize

JOB_KINDS = ("fusion", "fill", "render", "score")

_MEDIA_TYPES = {
    ".json": "application/json",
    ".csv": "text/csv",
    ".txt": "text/plain",
    ".png": "image/png",
    ".jsonl": "application/x-ndjson",
    ".ply": "application/octet-stream",
}


def _canonical_hash(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2) + "\n")
    tmp.replace(path)


def _err(status: int, message: str, **extra):
    detail = {"message": message}
    detail.update(extra)
    return HTTPException(status_code=status, detail=detail)


class ServiceState:
    """Registry over the data directory plus in-memory caches.

    Disk is authoritative; every cache entry can be rebuilt from files,
    which is what restores sessions after a crash.
    """

    def __init__(self, data_dir: Union[str, Path], workers: int = 2):
        self.data_dir = Path(data_dir)
        for sub in ("scenes", "sessions", "jobs"):
            (self.data_dir / sub).mkdir(parents=True, exist_ok=True)
        self.taxonomy = default_taxonomy()
        self.executor = ThreadPoolExecutor(max_workers=max(1, int(workers)))
        self.lock = threading.RLock()
        self._scene_objs: Dict[str, SessionScene] = {}
        self._sessions: Dict[str, Session] = {}
        self._session_locks: Dict[str, threading.Lock] = {}

    # -- paths -------------------------------------------------------

    def scene_dir(self, scene_id: str) -> Path:
        return self.data_dir / "scenes" / scene_id

    def session_dir(self, session_id: str) -> Path:
        return self.data_dir / "sessions" / session_id

    def job_dir(self, job_id: str) -> Path:
        return self.data_dir / "jobs" / job_id

    # -- scenes ------------------------------------------------------

    def scene_record(self, scene_id: str) -> dict:
        path = self.scene_dir(scene_id) / "scene.json"
        if not path.is_file():
            raise _err(404, f"unknown scene '{scene_id}'")
        return json.loads(path.read_text())

    def save_scene_record(self, record: dict) -> None:
        _write_json(self.scene_dir(record["scene_id"]) / "scene.json", record)

    def ready_scene(self, scene_id: str) -> dict:
        record = self.scene_record(scene_id)
        if record["status"] != "ready":
            raise _err(409, f"scene '{scene_id}' is not ready "
                            f"(status {record['status']})")
        return record

    def scene_object(self, scene_id: str) -> SessionScene:
        with self.lock:
            cached = self._scene_objs.get(scene_id)
            if cached is not None:
                return cached
        record = self.ready_scene(scene_id)
        root = self.scene_dir(scene_id)
        config = PreprocessConfig.from_dict(record["config"])
        if record["kind"] == "cloud":
            grid = load_grid(root / "grid")
            scene = make_voxel_scene(scene_id, grid, config)
        else:
            mesh = load_mesh(root / record["source_file"])
            scene = SessionScene(scene_id, mesh, load_chunkset(root))
        with self.lock:
            self._scene_objs.setdefault(scene_id, scene)
            return self._scene_objs[scene_id]

    def preprocess_scene(self, scene_id: str) -> None:
        record = self.scene_record(scene_id)
        root = self.scene_dir(scene_id)
        source = root / record["source_file"]
        config = PreprocessConfig.from_dict(record["config"])
        try:
            mesh = None
            try:
                mesh = load_mesh(source)
            except SceneError:
                pass
            if mesh is not None and mesh.num_faces > 0:
                scene = SessionScene(scene_id, mesh,
                                     split_chunks(mesh, config, scene_id))
                save_chunkset(scene.chunk_set, root)
                record.update(kind="mesh", element_kind="face",
                              num_elements=mesh.num_faces,
                              num_chunks=len(scene.chunk_set.chunks))
            else:
                cloud = load_cloud(source)
                if cloud.num_points == 0:
                    raise ValidationError("file holds no geometry")
                grid = voxelize(cloud, config.voxel_step, config.min_points)
                if grid.num_occupied == 0:
                    raise ValidationError(
                        "no voxel collected more than "
                        f"{config.min_points} points at step {config.voxel_step}")
                save_grid(grid, root / "grid")
                scene = make_voxel_scene(scene_id, grid, config)
                save_chunkset(scene.chunk_set, root)
                record.update(kind="cloud", element_kind="voxel",
                              num_elements=grid.num_occupied,
                              num_chunks=len(scene.chunk_set.chunks))
            record["status"] = "ready"
            record["message"] = ""
            with self.lock:
                self._scene_objs[scene_id] = scene
        except Exception as e:  # noqa: BLE001 - reported through the record
            record["status"] = "failed"
            record["message"] = str(e)
        self.save_scene_record(record)

    # -- sessions ----------------------------------------------------

    def session_lock(self, session_id: str) -> threading.Lock:
        with self.lock:
            return self._session_locks.setdefault(session_id, threading.Lock())

    def session_record(self, session_id: str) -> dict:
        path = self.session_dir(session_id) / "session.json"
        if not path.is_file():
            raise _err(404, f"unknown session '{session_id}'")
        return json.loads(path.read_text())

    def session_object(self, session_id: str) -> Session:
        with self.lock:
            cached = self._sessions.get(session_id)
            if cached is not None:
                return cached
        record = self.session_record(session_id)
        scene = self.scene_object(record["scene_id"])
        log_path = self.session_dir(session_id) / "strokes.jsonl"
        strokes = load_stroke_log(log_path) if log_path.is_file() else []
        session = replay(strokes, scene, taxonomy=self.taxonomy,
                         cross_chunk=bool(record.get("cross_chunk", False)))
        with self.lock:
            self._sessions.setdefault(session_id, session)
            return self._sessions[session_id]

    # -- jobs ----------------------------------------------------------

    def job_record(self, job_id: str) -> dict:
        path = self.job_dir(job_id) / "job.json"
        if not path.is_file():
            raise _err(404, f"unknown job '{job_id}'")
        return json.loads(path.read_text())

    def save_job_record(self, record: dict) -> None:
        _write_json(self.job_dir(record["job_id"]) / "job.json", record)


def _require(payload: dict, key: str):
    if key not in payload:
        raise _err(422, f"missing required field '{key}'")
    return payload[key]


def _as_labels_dict(raw) -> Dict[int, int]:
    try:
        return {int(k): int(v) for k, v in raw.items()}
    except (AttributeError, TypeError, ValueError):
        raise _err(422, "labels must map element ids to label ids") from None


def create_app(data_dir: Union[str, Path], workers: int = 2) -> FastAPI:
    state = ServiceState(data_dir, workers)
    app = FastAPI(title="annot3d service")
    app.state.annot3d = state
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.get("/taxonomy")
    def get_taxonomy():
        """Label classes with their palette colors; clients derive all label
        coloring from this rather than shipping their own palette."""
        return state.taxonomy.to_dict()

    # -- scenes --------------------------------------------------------

    @app.post("/scenes", status_code=202)
    async def create_scene(file: UploadFile = File(...),
                           config: Optional[str] = Form(None)):
        try:
            cfg = PreprocessConfig.from_dict(json.loads(config)) if config \
                else PreprocessConfig()
        except (json.JSONDecodeError, SceneError) as e:
            raise _err(422, f"bad preprocess config: {e}")
        data = await file.read()
        if not data:
            raise _err(422, "empty upload")
        suffix = Path(file.filename or "upload.ply").suffix.lower() or ".ply"
        scene_id = uuid.uuid4().hex[:12]
        root = state.scene_dir(scene_id)
        root.mkdir(parents=True)
        source_name = f"source{suffix}"
        (root / source_name).write_bytes(data)
        record = {
            "scene_id": scene_id,
            "status": "pending",
            "message": "",
            "source_file": source_name,
            "source_hash": hashlib.sha256(data).hexdigest(),
            "config": cfg.to_dict(),
            "kind": None,
            "element_kind": None,
            "num_elements": None,
            "num_chunks": None,
            "created": time.time(),
        }
        state.save_scene_record(record)
        state.executor.submit(state.preprocess_scene, scene_id)
        return {"scene_id": scene_id, "status": "pending"}

    @app.get("/scenes/{scene_id}")
    def get_scene(scene_id: str):
        record = state.scene_record(scene_id)
        if record["status"] == "ready":
            scene = state.scene_object(scene_id)
            record["chunks"] = [
                {"chunk_id": c.chunk_id, "cell": list(c.cell),
                 "num_faces": c.num_faces,
                 "lod_faces": [lvl.mesh.num_faces for lvl in c.levels]}
                for c in scene.chunk_set.chunks]
            record["cell_size"] = scene.chunk_set.cell_size
        return record

    def _chunk_or_404(scene_id: str, chunk_id: int, lod: int):
        scene = state.scene_object(scene_id)
        if lod not in (0, 1, 2):
            raise _err(422, "lod must be 0, 1, or 2")
        try:
            chunk = scene.chunk_set.chunk(chunk_id)
        except (KeyError, IndexError, SceneError):
            raise _err(404, f"scene '{scene_id}' has no chunk {chunk_id}") from None
        return scene, chunk

    @app.get("/scenes/{scene_id}/chunks/{chunk_id}")
    def get_chunk(scene_id: str, chunk_id: int, lod: int = 0):
        state.ready_scene(scene_id)
        _, chunk = _chunk_or_404(scene_id, chunk_id, lod)
        level = chunk.levels[lod]
        meta = {
            "chunk_id": chunk.chunk_id,
            "cell": list(chunk.cell),
            "lod": lod,
            "num_faces": level.mesh.num_faces,
            "face_ids": chunk.face_ids.tolist(),
            "mesh_url": f"/scenes/{scene_id}/chunks/{chunk_id}/mesh?lod={lod}",
        }
        if lod > 0:
            meta["source_to_lod"] = level.source_to_lod.tolist()
        return meta

    @app.get("/scenes/{scene_id}/chunks/{chunk_id}/mesh")
    def get_chunk_mesh(scene_id: str, chunk_id: int, lod: int = 0):
        state.ready_scene(scene_id)
        _chunk_or_404(scene_id, chunk_id, lod)
        path = state.scene_dir(scene_id) / "chunks" / str(chunk_id) / f"lod{lod}.ply"
        if not path.is_file():
            raise _err(404, f"missing chunk payload {path.name}")
        return Response(content=path.read_bytes(),
                        media_type="application/octet-stream")

    # -- sessions ------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session_endpoint(payload: dict = Body(...)):
        scene_id = str(_require(payload, "scene_id"))
        state.ready_scene(scene_id)
        scene = state.scene_object(scene_id)
        session_id = uuid.uuid4().hex[:12]
        record = {
            "session_id": session_id,
            "scene_id": scene_id,
            "annotator": str(payload.get("annotator", "anon")),
            "cross_chunk": bool(payload.get("cross_chunk", False)),
            "created": time.time(),
            "updated": time.time(),
        }
        root = state.session_dir(session_id)
        root.mkdir(parents=True)
        (root / "strokes.jsonl").touch()
        _write_json(root / "session.json", record)
        with state.lock:
            state._sessions[session_id] = Session(
                scene, state.taxonomy, cross_chunk=record["cross_chunk"])
        return {"session_id": session_id, "scene_id": scene_id,
                "annotator": record["annotator"], "next_seq": 1}

    @app.post("/sessions/{session_id}/strokes")
    def post_stroke(session_id: str, payload: dict = Body(...)):
        record = state.session_record(session_id)
        session = state.session_object(session_id)
        with state.session_lock(session_id):
            expected = len(session.strokes) + 1
            seq = payload.get("seq")
            if seq != expected:
                raise _err(409, f"seq {seq} conflicts; expected {expected}",
                           expected_seq=expected)
            rec = {k: payload[k] for k in ("label", "radius", "ray", "face", "ts")
                   if k in payload}
            rec["annotator"] = record["annotator"]
            try:
                stroke = Stroke.from_dict(rec)
            except SceneError as e:
                raise _err(422, f"bad stroke: {e}")
            try:
                affected = session.paint(stroke)
            except RayMissError as e:
                raise _err(422, f"ray miss: {e}")
            except ValidationError as e:
                raise _err(422, f"bad stroke: {e}")
            log_path = state.session_dir(session_id) / "strokes.jsonl"
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(stroke.to_dict(expected)) + "\n")
            record["updated"] = time.time()
            _write_json(state.session_dir(session_id) / "session.json", record)
            return {"seq": expected, "affected": affected.tolist(),
                    "progress": session.progress(), "next_seq": expected + 1}

    @app.get("/sessions/{session_id}/progress")
    def get_progress(session_id: str):
        record = state.session_record(session_id)
        session = state.session_object(session_id)
        return {"session_id": session_id, "scene_id": record["scene_id"],
                "progress": session.progress(),
                "num_strokes": len(session.strokes),
                "next_seq": len(session.strokes) + 1}

    @app.get("/sessions/{session_id}/unlabeled")
    def get_unlabeled(session_id: str):
        session = state.session_object(session_id)
        return {"session_id": session_id,
                "element_ids": session.unlabeled_elements().tolist()}

    @app.api_route("/sessions/{session_id}/export", methods=["GET", "POST"])
    def export_session(session_id: str):
        session = state.session_object(session_id)
        with state.session_lock(session_id):
            exported = session.export()
        return {"scene_id": exported.scene_id, "kind": exported.kind,
                "num_elements": exported.num_elements,
                "labels": {str(k): v for k, v in sorted(exported.labels.items())}}

    # -- jobs ----------------------------------------------------------

    def _map_payload(label_map: LabelMap) -> list:
        return [label_map.kind, label_map.num_elements,
                sorted(label_map.labels.items())]

    def _resolve_labels(scene_id: str, src, record: dict) -> LabelMap:
        if not isinstance(src, dict):
            raise _err(422, "label source must be an object")
        if "session_id" in src:
            session = state.session_object(str(src["session_id"]))
            if session.scene.scene_id != scene_id:
                raise _err(422, "label source belongs to a different scene")
            with state.session_lock(str(src["session_id"])):
                return session.export()
        if "job_id" in src:
            job = state.job_record(str(src["job_id"]))
            if job["status"] != "done":
                raise _err(422, f"job '{job['job_id']}' is not done "
                                f"(status {job['status']})")
            name = src.get("artifact", "labels")
            rel = job.get("artifacts", {}).get(name)
            if rel is None:
                raise _err(422, f"job '{job['job_id']}' has no artifact '{name}'")
            loaded = load_label_map(state.job_dir(job["job_id"]) / rel,
                                    taxonomy=state.taxonomy)
            if loaded.scene_id != scene_id:
                raise _err(422, "label source belongs to a different scene")
            return loaded
        if "labels" in src:
            return LabelMap(scene_id, src.get("kind", record["element_kind"]),
                            _as_labels_dict(src["labels"]),
                            num_elements=record["num_elements"])
        raise _err(422, "label source needs session_id, job_id, or labels")

    def _resolve_uncertainty(scene_id: str, src, kind: str) -> UncertaintyMap:
        if not isinstance(src, dict):
            raise _err(422, "uncertainty source must be an object")
        if "job_id" in src:
            job = state.job_record(str(src["job_id"]))
            rel = job.get("artifacts", {}).get("uncertainty")
            if job["status"] != "done" or rel is None:
                raise _err(422, f"job '{src['job_id']}' has no uncertainty artifact")
            loaded = load_uncertainty(state.job_dir(job["job_id"]) / rel)
            if loaded.scene_id != scene_id:
                raise _err(422, "uncertainty belongs to a different scene")
            return loaded
        if "values" in src:
            try:
                entries = {int(k): UncertaintyEntry(float(v), 0.0, 1)
                           for k, v in src["values"].items()}
            except (AttributeError, TypeError, ValueError):
                raise _err(422, "uncertainty values must map ids to numbers") from None
            return UncertaintyMap(scene_id, kind, entries)
        raise _err(422, "uncertainty source needs job_id or values")

    def _positions_for(scene_id: str, kind: str) -> np.ndarray:
        scene = state.scene_object(scene_id)
        if kind == "voxel":
            if not scene.is_voxel:
                raise _err(422, "scene has no voxel grid")
            return scene.grid.voxel_centers()
        return face_centroids(scene.mesh)

    def _areas_for(scene_id: str, kind: str, area_source: str) -> np.ndarray:
        scene = state.scene_object(scene_id)
        if area_source == "unit-counts" or kind == "voxel":
            n = scene.grid.num_occupied if kind == "voxel" else scene.mesh.num_faces
            return np.ones(n)
        return face_areas(scene.mesh)

    def _dense_face_view(scene: SessionScene, label_map: LabelMap,
                         umap: Optional[UncertaintyMap]):
        """Voxel-kind results mapped onto cube faces for the renderer."""
        if label_map.kind == "face":
            return label_map, umap
        voxels = label_map.to_array(scene.grid.num_occupied)
        dense = voxels[scene.face_to_voxel]
        face_map = LabelMap.from_array(scene.scene_id, "face", dense)
        face_u = None
        if umap is not None:
            entries = {}
            for face_id, voxel_id in enumerate(scene.face_to_voxel):
                entry = umap.entries.get(int(voxel_id))
                if entry is not None:
                    entries[face_id] = entry
            face_u = UncertaintyMap(scene.scene_id, "face", entries)
        return face_map, face_u

    def _run_fusion(job_dir: Path, inputs: dict) -> dict:
        aset = AnnotationSet.from_maps([m for _, m in inputs["maps"]],
                                       [a for a, _ in inputs["maps"]])
        fused = integrate(aset)
        umap = uncertainty(aset, state.taxonomy)
        save_label_map(fused, job_dir / "fused.labels.csv", state.taxonomy)
        save_uncertainty(umap, job_dir / "fused.uncert.csv")
        return {"labels": "fused.labels.csv", "uncertainty": "fused.uncert.csv"}

    def _run_fill(job_dir: Path, inputs: dict) -> dict:
        config = inputs["config"]
        positions = _positions_for(inputs["scene_id"], inputs["labels"].kind)
        if inputs["uncertainty"] is not None:
            filled = fill_with_uncertainty(inputs["labels"], inputs["uncertainty"],
                                           positions, config)
        else:
            filled = fill_unlabeled(inputs["labels"], positions, config)
        save_label_map(filled, job_dir / "filled.labels.csv", state.taxonomy)
        return {"labels": "filled.labels.csv"}

    def _run_render(job_dir: Path, inputs: dict) -> dict:
        scene = state.scene_object(inputs["scene_id"])
        face_map, face_u = _dense_face_view(scene, inputs["labels"],
                                            inputs["uncertainty"])
        traj_path = job_dir / "trajectory.jsonl"
        with open(traj_path, "w", encoding="utf-8") as fh:
            for row in inputs["frames"]:
                fh.write(json.dumps(row) + "\n")
        report = render_batch(scene.mesh, face_map, traj_path, job_dir / "frames",
                              uncertainty=face_u, taxonomy=state.taxonomy,
                              color_preview=inputs["color_preview"])
        artifacts = {"trajectory": "trajectory.jsonl"}
        for path in report.written:
            artifacts[path.name] = str(path.relative_to(job_dir))
        return artifacts, {"skipped_rows": report.skipped,
                           "num_frames": report.num_frames}

    def _run_score(job_dir: Path, inputs: dict) -> dict:
        areas = _areas_for(inputs["scene_id"], inputs["gt"].kind,
                           inputs["area_source"])
        report = mean_iou(inputs["gt"], inputs["pred"], areas, state.taxonomy,
                          area_source=inputs["area_source"])
        (job_dir / "score.json").write_text(report.to_json() + "\n")
        (job_dir / "score.txt").write_text(format_table(report) + "\n")
        return {"report": "score.json", "table": "score.txt"}

    _RUNNERS = {"fusion": _run_fusion, "fill": _run_fill,
                "render": _run_render, "score": _run_score}

    def _execute_job(job_id: str, kind: str, inputs: dict) -> None:
        record = state.job_record(job_id)
        record["status"] = "running"
        state.save_job_record(record)
        try:
            result = _RUNNERS[kind](state.job_dir(job_id), inputs)
            if isinstance(result, tuple):
                artifacts, extra = result
                record.update(extra)
            else:
                artifacts = result
            record["artifacts"] = artifacts
            record["status"] = "done"
        except Exception as e:  # noqa: BLE001 - reported through the record
            record["status"] = "failed"
            record["message"] = str(e)
        state.save_job_record(record)

    def _resolve_job(kind: str, payload: dict):
        """Returns (resolved inputs dict, canonical hash payload)."""
        scene_id = str(_require(payload, "scene_id"))
        record = state.ready_scene(scene_id)
        if kind == "fusion":
            session_ids = _require(payload, "session_ids")
            if not isinstance(session_ids, list) or not session_ids:
                raise _err(422, "session_ids must be a non-empty list")
            maps = []
            for sid in session_ids:
                rec = state.session_record(str(sid))
                if rec["scene_id"] != scene_id:
                    raise _err(422, f"session '{sid}' belongs to a different scene")
                session = state.session_object(str(sid))
                with state.session_lock(str(sid)):
                    maps.append((rec["annotator"], session.export()))
            maps.sort(key=lambda pair: (pair[0], sorted(pair[1].labels.items())))
            canon = {"kind": kind, "scene_id": scene_id,
                     "maps": [[a, _map_payload(m)] for a, m in maps]}
            return {"scene_id": scene_id, "maps": maps}, canon
        if kind == "fill":
            labels = _resolve_labels(scene_id, _require(payload, "source"), record)
            raw_cfg = payload.get("config", {})
            if not isinstance(raw_cfg, dict):
                raise _err(422, "config must be an object")
            try:
                config = FillConfig(k=int(raw_cfg.get("k", 5)),
                                    th_u=raw_cfg.get("th_u"),
                                    weighting=raw_cfg.get("weighting", "confidence"))
            except (SceneError, TypeError, ValueError) as e:
                raise _err(422, f"bad fill config: {e}")
            umap = None
            if "uncertainty" in payload:
                umap = _resolve_uncertainty(scene_id, payload["uncertainty"],
                                            labels.kind)
            if config.th_u is not None and umap is None:
                raise _err(422, "config.th_u given but no uncertainty source")
            canon = {"kind": kind, "scene_id": scene_id,
                     "labels": _map_payload(labels),
                     "config": [config.k, config.th_u, config.weighting],
                     "uncertainty": None if umap is None else
                     sorted((e, round(v.u, 12)) for e, v in umap.entries.items())}
            return {"scene_id": scene_id, "labels": labels, "config": config,
                    "uncertainty": umap}, canon
        if kind == "render":
            labels = _resolve_labels(scene_id, _require(payload, "source"), record)
            frames = _require(payload, "frames")
            if not isinstance(frames, list):
                raise _err(422, "frames must be a list of trajectory rows")
            umap = None
            if "uncertainty" in payload:
                umap = _resolve_uncertainty(scene_id, payload["uncertainty"],
                                            labels.kind)
            preview = bool(payload.get("color_preview", False))
            canon = {"kind": kind, "scene_id": scene_id,
                     "labels": _map_payload(labels), "frames": frames,
                     "color_preview": preview,
                     "uncertainty": None if umap is None else
                     sorted((e, round(v.u, 12)) for e, v in umap.entries.items())}
            return {"scene_id": scene_id, "labels": labels, "frames": frames,
                    "uncertainty": umap, "color_preview": preview}, canon
        if kind == "score":
            gt = _resolve_labels(scene_id, _require(payload, "gt"), record)
            pred = _resolve_labels(scene_id, _require(payload, "pred"), record)
            if gt.kind != pred.kind:
                raise _err(422, "gt and pred use different element kinds")
            area_source = payload.get(
                "area_source", "unit-counts" if gt.kind == "voxel" else "face-areas")
            if area_source not in ("face-areas", "unit-counts"):
                raise _err(422, f"unknown area source '{area_source}'")
            canon = {"kind": kind, "scene_id": scene_id, "gt": _map_payload(gt),
                     "pred": _map_payload(pred), "area_source": area_source}
            return {"scene_id": scene_id, "gt": gt, "pred": pred,
                    "area_source": area_source}, canon
        raise _err(404, f"unknown job kind '{kind}'")

    @app.post("/jobs/{kind}", status_code=202)
    def submit_job(kind: str, payload: dict = Body(...)):
        if kind not in JOB_KINDS:
            raise _err(404, f"unknown job kind '{kind}'; expected one of "
                            f"{', '.join(JOB_KINDS)}")
        inputs, canon = _resolve_job(kind, payload)
        job_id = _canonical_hash(canon)
        with state.lock:
            existing = state.job_dir(job_id) / "job.json"
            if existing.is_file():
                return json.loads(existing.read_text())
            job_dir = state.job_dir(job_id)
            job_dir.mkdir(parents=True, exist_ok=True)
            record = {"job_id": job_id, "kind": kind, "status": "pending",
                      "message": "", "scene_id": inputs["scene_id"],
                      "artifacts": {}, "created": time.time()}
            state.save_job_record(record)
        state.executor.submit(_execute_job, job_id, kind, inputs)
        return record

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        record = state.job_record(job_id)
        record["artifact_urls"] = {
            name: f"/jobs/{job_id}/artifacts/{rel}"
            for name, rel in record.get("artifacts", {}).items()}
        return record

    @app.get("/jobs/{job_id}/artifacts/{rel_path:path}")
    def get_artifact(job_id: str, rel_path: str):
        state.job_record(job_id)
        base = state.job_dir(job_id).resolve()
        target = (base / rel_path).resolve()
        if base not in target.parents and target != base:
            raise _err(404, "no such artifact")
        if not target.is_file():
            raise _err(404, f"no such artifact '{rel_path}'")
        media = _MEDIA_TYPES.get(target.suffix, "application/octet-stream")
        return FileResponse(target, media_type=media)

    return app
