import { describe, expect, it } from "vitest";

import type { ChunkPayload } from "../src/api.js";
import {
  ChunkPlacement,
  LodBands,
  Vec3,
  chunkCenter,
  desiredLod,
  planTransitions,
} from "../src/lod.js";
import { Palette } from "../src/palette.js";
import { LodStreamer, StreamerApi } from "../src/streamer.js";
import { ViewerState } from "../src/viewerState.js";

const BANDS: LodBands = { actionRange: 10, farRange: 20 };

// four chunks in a row along x, cell size 8: centers at x = 4, 12, 20, 28
const ROW: ChunkPlacement[] = [0, 1, 2, 3].map((i) => ({
  chunkId: i,
  center: chunkCenter([i, 0, 0], 8),
}));

const TINY_TAXONOMY = {
  classes: [
    { id: 0, name: "void", color: [0, 0, 0] as [number, number, number] },
    { id: 1, name: "thing", color: [200, 30, 30] as [number, number, number] },
  ],
};

function residentAfter(camera: Vec3, state: ViewerState): Map<number, number> {
  for (const t of planTransitions(camera, ROW, state.residentLods, BANDS)) {
    state.setResident(t.chunkId, t.lod);
  }
  return new Map(state.residentLods);
}

describe("desiredLod", () => {
  it("maps distances to bands with inclusive thresholds", () => {
    expect(desiredLod(0, BANDS)).toBe(0);
    expect(desiredLod(10, BANDS)).toBe(0);
    expect(desiredLod(10.001, BANDS)).toBe(1);
    expect(desiredLod(20, BANDS)).toBe(1);
    expect(desiredLod(20.001, BANDS)).toBe(2);
  });

  it("rejects malformed bands", () => {
    expect(() => planTransitions([0, 0, 0], ROW, new Map(), {
      actionRange: 5, farRange: 5,
    })).toThrow(/actionRange/);
  });
});

describe("planTransitions", () => {
  it("puts the chunk the camera is inside at LOD 0", () => {
    const resident = residentAfter([20, 4, 4], new ViewerState(Palette.fromTaxonomy(TINY_TAXONOMY)));
    expect(resident.get(2)).toBe(0);
  });

  it("degrades everything to LOD 2 when the camera is far away", () => {
    const state = new ViewerState(Palette.fromTaxonomy(TINY_TAXONOMY));
    const resident = residentAfter([1000, 4, 4], state);
    expect([...resident.values()]).toEqual([2, 2, 2, 2]);
  });

  it("walks a camera path with exactly the expected transitions", () => {
    const state = new ViewerState(Palette.fromTaxonomy(TINY_TAXONOMY));

    // initial load from the center of chunk 0: distances 0, 8, 16, 24
    let plan = planTransitions([4, 4, 4], ROW, state.residentLods, BANDS);
    expect(plan).toEqual([
      { chunkId: 0, lod: 0, previous: null },
      { chunkId: 1, lod: 0, previous: null },
      { chunkId: 2, lod: 1, previous: null },
      { chunkId: 3, lod: 2, previous: null },
    ]);
    for (const t of plan) state.setResident(t.chunkId, t.lod);

    // step to x=8: chunk 3 comes inside the far band (distance 20), the
    // rest stay in their bands, so exactly one chunk reloads
    plan = planTransitions([8, 4, 4], ROW, state.residentLods, BANDS);
    expect(plan).toEqual([{ chunkId: 3, lod: 1, previous: 2 }]);
    for (const t of plan) state.setResident(t.chunkId, t.lod);

    // step to x=12: chunk 2 enters the action range (distance 8)
    plan = planTransitions([12, 4, 4], ROW, state.residentLods, BANDS);
    expect(plan).toEqual([{ chunkId: 2, lod: 0, previous: 1 }]);
    for (const t of plan) state.setResident(t.chunkId, t.lod);

    // a small move that crosses no band boundary changes nothing
    plan = planTransitions([13, 4, 4], ROW, state.residentLods, BANDS);
    expect(plan).toEqual([]);

    // retreat to x=-20: chunk 0 at distance 24 drops to LOD 2, chunks 1-3
    // fall out past the far band too
    plan = planTransitions([-20, 4, 4], ROW, state.residentLods, BANDS);
    expect(plan).toEqual([
      { chunkId: 0, lod: 2, previous: 0 },
      { chunkId: 1, lod: 2, previous: 0 },
      { chunkId: 2, lod: 2, previous: 0 },
      { chunkId: 3, lod: 2, previous: 1 },
    ]);
  });
});

function fakeApi(failures = 0) {
  const calls: Array<[number, number]> = [];
  let remaining = failures;
  const api: StreamerApi = {
    async chunk(_scene, chunkId, lod): Promise<ChunkPayload> {
      if (remaining > 0) {
        remaining--;
        throw new Error("transient fetch failure");
      }
      calls.push([chunkId, lod]);
      return {
        chunk_id: chunkId, cell: [chunkId, 0, 0], lod,
        num_faces: 1, face_ids: [chunkId], mesh_url: "",
      };
    },
    async chunkMesh(): Promise<ArrayBuffer> {
      return new ArrayBuffer(0);
    },
  };
  return { api, calls };
}

describe("LodStreamer", () => {
  it("downloads planned chunks once and settles", async () => {
    const state = new ViewerState(Palette.fromTaxonomy(TINY_TAXONOMY));
    const { api, calls } = fakeApi();
    const swapped: number[] = [];
    const streamer = new LodStreamer(api, "s", ROW, state,
      (chunkId) => swapped.push(chunkId), { bands: BANDS });

    const first = await streamer.update([4, 4, 4]);
    expect(first.length).toBe(4);
    expect(calls).toEqual([[0, 0], [1, 0], [2, 1], [3, 2]]);
    expect(swapped).toEqual([0, 1, 2, 3]);
    expect(state.residentLods.get(3)).toBe(2);

    // same camera again: nothing to do, no network traffic
    const second = await streamer.update([4, 4, 4]);
    expect(second).toEqual([]);
    expect(calls.length).toBe(4);
  });

  it("retries failed downloads with backoff before giving up", async () => {
    const state = new ViewerState(Palette.fromTaxonomy(TINY_TAXONOMY));
    const { api, calls } = fakeApi(2);
    const waits: number[] = [];
    const streamer = new LodStreamer(api, "s", [ROW[0]!], state,
      () => undefined,
      { bands: BANDS, backoffMs: 100, sleep: async (ms) => { waits.push(ms); } });

    await streamer.update([4, 4, 4]);
    expect(waits).toEqual([100, 200]);
    expect(calls).toEqual([[0, 0]]);
    expect(state.residentLods.get(0)).toBe(0);
  });

  it("gives up after the retry budget and leaves state unchanged", async () => {
    const state = new ViewerState(Palette.fromTaxonomy(TINY_TAXONOMY));
    const { api } = fakeApi(100);
    const streamer = new LodStreamer(api, "s", [ROW[0]!], state,
      () => undefined,
      { bands: BANDS, retries: 2, sleep: async () => undefined });

    await expect(streamer.update([4, 4, 4])).rejects.toThrow(/transient/);
    expect(state.residentLods.has(0)).toBe(false);
  });
});
