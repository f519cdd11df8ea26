// Typed client for the annot3d HTTP service. Every call in the UI goes
// through this module; nothing else touches the network.

export interface TaxonomyClass {
  id: number;
  name: string;
  color: [number, number, number];
}

export interface Taxonomy {
  classes: TaxonomyClass[];
}

export interface ChunkSummary {
  chunk_id: number;
  cell: number[];
  num_faces: number;
  lod_faces: number[];
}

export interface SceneRecord {
  scene_id: string;
  status: "pending" | "ready" | "failed";
  message: string;
  kind: string | null;
  element_kind: string | null;
  num_elements: number | null;
  num_chunks: number | null;
  chunks?: ChunkSummary[];
  cell_size?: number;
}

export interface ChunkPayload {
  chunk_id: number;
  cell: number[];
  lod: number;
  num_faces: number;
  face_ids: number[];
  mesh_url: string;
  source_to_lod?: number[];
}

export interface SessionInfo {
  session_id: string;
  scene_id: string;
  annotator: string;
  next_seq: number;
}

export interface StrokeRay {
  origin: [number, number, number];
  direction: [number, number, number];
}

export interface StrokeRequest {
  seq: number;
  label: number;
  radius: number;
  ray?: StrokeRay;
  face?: number;
  ts?: number;
}

export interface StrokeResponse {
  seq: number;
  affected: number[];
  progress: number;
  next_seq: number;
}

export interface ProgressPayload {
  session_id: string;
  scene_id: string;
  progress: number;
  num_strokes: number;
  next_seq: number;
}

export interface ExportPayload {
  scene_id: string;
  kind: string;
  num_elements: number;
  labels: Record<string, number>;
}

export class ApiError extends Error {
  readonly status: number;
  readonly expectedSeq?: number;

  constructor(status: number, message: string, expectedSeq?: number) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.expectedSeq = expectedSeq;
  }
}

async function raiseFor(resp: Response): Promise<never> {
  let message = `HTTP ${resp.status}`;
  let expectedSeq: number | undefined;
  try {
    const body = await resp.json();
    const detail = body?.detail;
    if (typeof detail === "string") {
      message = detail;
    } else if (detail && typeof detail.message === "string") {
      message = detail.message;
      if (typeof detail.expected_seq === "number") {
        expectedSeq = detail.expected_seq;
      }
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ApiError(resp.status, message, expectedSeq);
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: typeof fetch;

  constructor(baseUrl: string, fetchFn: typeof fetch = fetch) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchFn = fetchFn;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      await raiseFor(resp);
    }
    return (await resp.json()) as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.json<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  taxonomy(): Promise<Taxonomy> {
    return this.json("/taxonomy");
  }

  async uploadScene(data: Blob, filename: string, config?: object): Promise<string> {
    const form = new FormData();
    form.append("file", data, filename);
    if (config) {
      form.append("config", JSON.stringify(config));
    }
    const resp = await this.fetchFn(this.base + "/scenes", {
      method: "POST",
      body: form,
    });
    if (!resp.ok) {
      await raiseFor(resp);
    }
    const body = (await resp.json()) as { scene_id: string };
    return body.scene_id;
  }

  scene(sceneId: string): Promise<SceneRecord> {
    return this.json(`/scenes/${sceneId}`);
  }

  chunk(sceneId: string, chunkId: number, lod: number): Promise<ChunkPayload> {
    return this.json(`/scenes/${sceneId}/chunks/${chunkId}?lod=${lod}`);
  }

  async chunkMesh(sceneId: string, chunkId: number, lod: number): Promise<ArrayBuffer> {
    const resp = await this.fetchFn(
      `${this.base}/scenes/${sceneId}/chunks/${chunkId}/mesh?lod=${lod}`);
    if (!resp.ok) {
      await raiseFor(resp);
    }
    return resp.arrayBuffer();
  }

  createSession(sceneId: string, annotator: string, crossChunk = false): Promise<SessionInfo> {
    return this.post("/sessions", {
      scene_id: sceneId,
      annotator,
      cross_chunk: crossChunk,
    });
  }

  postStroke(sessionId: string, stroke: StrokeRequest): Promise<StrokeResponse> {
    return this.post(`/sessions/${sessionId}/strokes`, stroke);
  }

  progress(sessionId: string): Promise<ProgressPayload> {
    return this.json(`/sessions/${sessionId}/progress`);
  }

  async unlabeled(sessionId: string): Promise<number[]> {
    const body = await this.json<{ element_ids: number[] }>(
      `/sessions/${sessionId}/unlabeled`);
    return body.element_ids;
  }

  exportLabels(sessionId: string): Promise<ExportPayload> {
    return this.json(`/sessions/${sessionId}/export`);
  }
}
