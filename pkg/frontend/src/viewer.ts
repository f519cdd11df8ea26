// three.js glue: scene graph, fly camera, chunk geometry, cursor highlight,
// and the wiring between mouse input and the paint queue. The client
// raycasts only to place the cursor highlight; the stroke itself is sent as
// a ray and the server decides what was hit.

import * as THREE from "three";
import { PLYLoader } from "three/examples/jsm/loaders/PLYLoader.js";

import { ApiClient, ChunkPayload } from "./api.js";
import { LabelStore } from "./labelStore.js";
import { ChunkPlacement, chunkCenter, Vec3 } from "./lod.js";
import { Palette, RGB } from "./palette.js";
import { PaintQueue } from "./paintQueue.js";
import { LoadedChunk, LodStreamer } from "./streamer.js";
import { submitPaintIfAllowed, ViewerState } from "./viewerState.js";

// server meshes carry no vertex colors, so geometry mode is flat shading
export const GEOMETRY_COLOR: RGB = [200, 200, 200];

interface ChunkView {
  payload: ChunkPayload;
  mesh: THREE.Mesh;
  /** global source-face id per rendered triangle */
  faceIds: number[];
}

function geometryFromPly(data: ArrayBuffer, payload: ChunkPayload): ChunkView {
  const loader = new PLYLoader();
  let geometry = loader.parse(data);
  if (geometry.index) {
    geometry = geometry.toNonIndexed();
  }
  const numFaces = geometry.getAttribute("position").count / 3;
  const faceIds: number[] = new Array(numFaces);
  if (payload.lod === 0) {
    for (let i = 0; i < numFaces; i++) {
      faceIds[i] = payload.face_ids[i]!;
    }
  } else {
    // source_to_lod maps chunk-local source face -> LOD face; show each
    // LOD face under the first source face that collapses onto it
    const firstSource: number[] = new Array(numFaces).fill(-1);
    const mapping = payload.source_to_lod ?? [];
    for (let local = 0; local < mapping.length; local++) {
      const lodFace = mapping[local]!;
      if (firstSource[lodFace] === -1) {
        firstSource[lodFace] = payload.face_ids[local]!;
      }
    }
    for (let i = 0; i < numFaces; i++) {
      faceIds[i] = firstSource[i] ?? -1;
    }
  }
  const colors = new Float32Array(numFaces * 9);
  geometry.setAttribute("color", new THREE.BufferAttribute(colors, 3));
  geometry.computeVertexNormals();
  const material = new THREE.MeshLambertMaterial({ vertexColors: true });
  const mesh = new THREE.Mesh(geometry, material);
  return { payload, mesh, faceIds };
}

function paintFace(colors: THREE.BufferAttribute, face: number, rgb: RGB | null): void {
  // hidden faces collapse to black; visibility is handled by tinting
  // because per-face culling would mean rebuilding index buffers
  const [r, g, b] = rgb ?? [0, 0, 0];
  for (let v = 0; v < 3; v++) {
    colors.setXYZ(face * 3 + v, r / 255, g / 255, b / 255);
  }
}

export class Viewer {
  readonly state: ViewerState;
  readonly store: LabelStore;
  private readonly api: ApiClient;
  private readonly palette: Palette;
  private readonly scene = new THREE.Scene();
  private readonly camera: THREE.PerspectiveCamera;
  private readonly renderer: THREE.WebGLRenderer;
  private readonly raycaster = new THREE.Raycaster();
  private readonly views = new Map<number, ChunkView>();
  private readonly keys = new Set<string>();
  private readonly cursor: THREE.Mesh;
  private streamer: LodStreamer | null = null;
  private queue: PaintQueue | null = null;
  private uncertainty = new Map<number, number>();
  private sceneId = "";
  private pointer = new THREE.Vector2();
  private dragging = false;
  private painting = false;

  onProgress: (percent: number) => void = () => {};
  onStatus: (text: string) => void = () => {};

  constructor(container: HTMLElement, api: ApiClient, palette: Palette) {
    this.api = api;
    this.palette = palette;
    this.state = new ViewerState(palette);
    this.store = new LabelStore(palette);
    this.camera = new THREE.PerspectiveCamera(
      60, container.clientWidth / container.clientHeight, 0.05, 2000);
    this.camera.position.set(5, -10, 8);
    this.camera.up.set(0, 0, 1);
    this.camera.lookAt(5, 5, 0);
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(container.clientWidth, container.clientHeight);
    container.appendChild(this.renderer.domElement);
    this.scene.background = new THREE.Color(0x20242b);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.55));
    const sun = new THREE.DirectionalLight(0xffffff, 1.1);
    sun.position.set(30, -40, 60);
    this.scene.add(sun);
    this.cursor = new THREE.Mesh(
      new THREE.SphereGeometry(0.12, 12, 12),
      new THREE.MeshBasicMaterial({ color: 0xffcc00 }));
    this.cursor.visible = false;
    this.scene.add(this.cursor);
    this.bindInput(container);
    this.renderer.setAnimationLoop(() => this.tick());
  }

  async load(sceneId: string): Promise<void> {
    const record = await this.api.scene(sceneId);
    if (record.status !== "ready" || !record.chunks || record.cell_size === undefined) {
      throw new Error(`scene ${sceneId} is not ready`);
    }
    this.sceneId = sceneId;
    this.state.sceneId = sceneId;
    const placements: ChunkPlacement[] = record.chunks.map((c) => ({
      chunkId: c.chunk_id,
      center: chunkCenter(c.cell, record.cell_size!),
    }));
    this.streamer = new LodStreamer(
      this.api, sceneId, placements, this.state,
      (chunkId, _lod, data, _previous) => this.swapChunk(chunkId, data));
    await this.refreshLods();
  }

  async openSession(annotator: string): Promise<void> {
    const info = await this.api.createSession(this.sceneId, annotator);
    this.state.sessionId = info.session_id;
    this.store.clear();
    this.queue = new PaintQueue(
      (stroke) => this.api.postStroke(info.session_id, stroke),
      {
        onApplied: (resp, stroke) => {
          this.store.applyStroke(resp.affected, stroke.label);
          this.recolorFaces(resp.affected);
          this.onProgress(resp.progress);
        },
        onRejected: () => this.onStatus("stroke missed"),
        onError: (err) => this.onStatus(String(err)),
      },
      info.next_seq);
  }

  setViewMode(mode: Parameters<ViewerState["setViewMode"]>[0]): void {
    this.state.setViewMode(mode);
    this.recolorAll();
  }

  setUncertainty(values: ReadonlyMap<number, number>): void {
    this.uncertainty = new Map(values);
    if (this.state.viewMode === "uncertainty") {
      this.recolorAll();
    }
  }

  /** Debug check: diff local labels against the server's export. */
  async verifyAgainstExport(): Promise<number> {
    if (!this.state.sessionId) {
      return 0;
    }
    const exported = await this.api.exportLabels(this.state.sessionId);
    const local = this.store.asExportMap();
    let mismatches = 0;
    const keys = new Set([...Object.keys(exported.labels), ...Object.keys(local)]);
    for (const key of keys) {
      if (exported.labels[key] !== local[key]) {
        mismatches++;
      }
    }
    this.onStatus(mismatches === 0
      ? "verify: client matches server"
      : `verify: ${mismatches} faces differ`);
    return mismatches;
  }

  private swapChunk(chunkId: number, data: LoadedChunk): void {
    const old = this.views.get(chunkId);
    if (old) {
      this.scene.remove(old.mesh);
      old.mesh.geometry.dispose();
    }
    const view = geometryFromPly(data.mesh, data.payload);
    view.mesh.userData.chunkId = chunkId;
    this.views.set(chunkId, view);
    this.scene.add(view.mesh);
    this.recolorChunk(view);
  }

  private colorFor(faceId: number): RGB | null {
    return this.store.faceColor(
      faceId, this.state.viewMode, GEOMETRY_COLOR, this.uncertainty);
  }

  private recolorChunk(view: ChunkView): void {
    const colors = view.mesh.geometry.getAttribute("color") as THREE.BufferAttribute;
    for (let face = 0; face < view.faceIds.length; face++) {
      paintFace(colors, face, this.colorFor(view.faceIds[face]!));
    }
    colors.needsUpdate = true;
  }

  private recolorAll(): void {
    for (const view of this.views.values()) {
      this.recolorChunk(view);
    }
  }

  private recolorFaces(affected: number[]): void {
    const wanted = new Set(affected);
    for (const view of this.views.values()) {
      const colors = view.mesh.geometry.getAttribute("color") as THREE.BufferAttribute;
      let touched = false;
      for (let face = 0; face < view.faceIds.length; face++) {
        if (wanted.has(view.faceIds[face]!)) {
          paintFace(colors, face, this.colorFor(view.faceIds[face]!));
          touched = true;
        }
      }
      if (touched) {
        colors.needsUpdate = true;
      }
    }
  }

  private async refreshLods(): Promise<void> {
    if (!this.streamer) {
      return;
    }
    const p = this.camera.position;
    await this.streamer.update([p.x, p.y, p.z]);
  }

  private pickRay(): { origin: Vec3; direction: Vec3; chunkId: number | null } {
    this.raycaster.setFromCamera(this.pointer, this.camera);
    const meshes = [...this.views.values()].map((v) => v.mesh);
    const hits = this.raycaster.intersectObjects(meshes, false);
    const hit = hits[0];
    const o = this.raycaster.ray.origin;
    const d = this.raycaster.ray.direction.clone().normalize();
    if (hit) {
      this.cursor.position.copy(hit.point);
      this.cursor.visible = true;
      return {
        origin: [o.x, o.y, o.z],
        direction: [d.x, d.y, d.z],
        chunkId: hit.object.userData.chunkId as number,
      };
    }
    this.cursor.visible = false;
    return { origin: [o.x, o.y, o.z], direction: [d.x, d.y, d.z], chunkId: null };
  }

  private tryPaint(): void {
    if (!this.queue) {
      return;
    }
    const pick = this.pickRay();
    if (pick.chunkId === null) {
      return;
    }
    // only full-resolution chunks are paintable; coarse LODs are for looking
    submitPaintIfAllowed(this.state, this.queue, pick.chunkId, {
      label: this.state.activeLabel,
      radius: this.state.brushRadius,
      ray: { origin: pick.origin, direction: pick.direction },
      ts: performance.now() / 1000,
    });
  }

  private bindInput(container: HTMLElement): void {
    const el = this.renderer.domElement;
    el.addEventListener("mousemove", (ev) => {
      const rect = el.getBoundingClientRect();
      this.pointer.x = ((ev.clientX - rect.left) / rect.width) * 2 - 1;
      this.pointer.y = -((ev.clientY - rect.top) / rect.height) * 2 + 1;
      if (this.dragging) {
        this.camera.rotation.order = "ZXY";
        this.camera.rotation.z -= ev.movementX * 0.004;
        this.camera.rotation.x -= ev.movementY * 0.004;
      } else if (this.painting) {
        this.tryPaint();
      }
    });
    el.addEventListener("mousedown", (ev) => {
      if (ev.button === 2) {
        this.dragging = true;
      } else if (ev.button === 0) {
        this.painting = true;
        this.tryPaint();
      }
    });
    window.addEventListener("mouseup", () => {
      this.dragging = false;
      this.painting = false;
    });
    el.addEventListener("contextmenu", (ev) => ev.preventDefault());
    window.addEventListener("keydown", (ev) => this.keys.add(ev.code));
    window.addEventListener("keyup", (ev) => this.keys.delete(ev.code));
    window.addEventListener("resize", () => {
      this.camera.aspect = container.clientWidth / container.clientHeight;
      this.camera.updateProjectionMatrix();
      this.renderer.setSize(container.clientWidth, container.clientHeight);
    });
  }

  private tick(): void {
    const speed = this.keys.has("ShiftLeft") ? 0.45 : 0.15;
    const forward = new THREE.Vector3();
    this.camera.getWorldDirection(forward);
    const right = new THREE.Vector3().crossVectors(forward, this.camera.up).normalize();
    if (this.keys.has("KeyW")) this.camera.position.addScaledVector(forward, speed);
    if (this.keys.has("KeyS")) this.camera.position.addScaledVector(forward, -speed);
    if (this.keys.has("KeyA")) this.camera.position.addScaledVector(right, -speed);
    if (this.keys.has("KeyD")) this.camera.position.addScaledVector(right, speed);
    if (this.keys.has("KeyQ")) this.camera.position.z -= speed;
    if (this.keys.has("KeyE")) this.camera.position.z += speed;
    const p = this.camera.position;
    this.state.pose = {
      position: [p.x, p.y, p.z],
      yaw: this.camera.rotation.z,
      pitch: this.camera.rotation.x,
    };
    if (this.keys.size > 0) {
      void this.refreshLods();
    }
    if (!this.dragging && !this.painting) {
      this.pickRay();
    }
    this.renderer.render(this.scene, this.camera);
  }
}
