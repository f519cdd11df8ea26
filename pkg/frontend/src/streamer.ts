import type { ChunkPayload } from "./api.js";
import {
  ChunkPlacement,
  DEFAULT_BANDS,
  LodBands,
  LodTransition,
  Vec3,
  planTransitions,
} from "./lod.js";
import type { ViewerState } from "./viewerState.js";

export interface StreamerApi {
  chunk(sceneId: string, chunkId: number, lod: number): Promise<ChunkPayload>;
  chunkMesh(sceneId: string, chunkId: number, lod: number): Promise<ArrayBuffer>;
}

export interface LoadedChunk {
  payload: ChunkPayload;
  mesh: ArrayBuffer;
}

export type ChunkSwap = (
  chunkId: number,
  lod: number,
  data: LoadedChunk,
  previous: number | null,
) => void;

export interface StreamerOptions {
  bands?: LodBands;
  retries?: number;
  backoffMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/**
 * Keeps resident chunk LODs in line with the camera. Each update plans the
 * transitions for the given camera position, downloads what changed, and
 * hands the geometry to the swap callback. Updates are serialized so a
 * slow download cannot interleave with the next camera move.
 */
export class LodStreamer {
  private readonly api: StreamerApi;
  private readonly sceneId: string;
  private readonly chunks: ChunkPlacement[];
  private readonly state: ViewerState;
  private readonly swap: ChunkSwap;
  private readonly bands: LodBands;
  private readonly retries: number;
  private readonly backoffMs: number;
  private readonly sleep: (ms: number) => Promise<void>;
  private chain: Promise<unknown> = Promise.resolve();

  constructor(
    api: StreamerApi,
    sceneId: string,
    chunks: ChunkPlacement[],
    state: ViewerState,
    swap: ChunkSwap,
    opts: StreamerOptions = {},
  ) {
    this.api = api;
    this.sceneId = sceneId;
    this.chunks = chunks;
    this.state = state;
    this.swap = swap;
    this.bands = opts.bands ?? DEFAULT_BANDS;
    this.retries = opts.retries ?? 3;
    this.backoffMs = opts.backoffMs ?? 250;
    this.sleep = opts.sleep ?? defaultSleep;
  }

  update(camera: Vec3): Promise<LodTransition[]> {
    const run = this.chain.then(() => this.applyOnce(camera));
    this.chain = run.catch(() => undefined);
    return run;
  }

  private async applyOnce(camera: Vec3): Promise<LodTransition[]> {
    const plan = planTransitions(camera, this.chunks, this.state.residentLods, this.bands);
    for (const step of plan) {
      const data = await this.fetchChunk(step.chunkId, step.lod);
      this.state.setResident(step.chunkId, step.lod);
      this.swap(step.chunkId, step.lod, data, step.previous);
    }
    return plan;
  }

  private async fetchChunk(chunkId: number, lod: number): Promise<LoadedChunk> {
    let lastErr: unknown;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      if (attempt > 0) {
        await this.sleep(this.backoffMs * 2 ** (attempt - 1));
      }
      try {
        const payload = await this.api.chunk(this.sceneId, chunkId, lod);
        const mesh = await this.api.chunkMesh(this.sceneId, chunkId, lod);
        return { payload, mesh };
      } catch (err) {
        lastErr = err;
      }
    }
    throw lastErr;
  }
}
