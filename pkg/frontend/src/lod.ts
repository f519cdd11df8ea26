// Distance-band LOD planning. Chunks near the camera are shown at full
// resolution (LOD 0) so they can be painted; everything further away
// degrades to the decimated levels. The planner is pure: it reports which
// chunks must change level, and the streamer does the fetching.

export type Vec3 = [number, number, number];

export interface LodBands {
  /** camera-to-center distance at or under which a chunk is LOD 0 */
  actionRange: number;
  /** distance at or under which a chunk is LOD 1; beyond it, LOD 2 */
  farRange: number;
}

export const DEFAULT_BANDS: LodBands = { actionRange: 12.0, farRange: 30.0 };

export interface ChunkPlacement {
  chunkId: number;
  center: Vec3;
}

export interface LodTransition {
  chunkId: number;
  lod: number;
  previous: number | null;
}

export function checkBands(bands: LodBands): void {
  if (!(bands.actionRange > 0) || !(bands.farRange > bands.actionRange)) {
    throw new Error("LOD bands need 0 < actionRange < farRange");
  }
}

export function chunkCenter(cell: number[], cellSize: number): Vec3 {
  return [
    (cell[0]! + 0.5) * cellSize,
    (cell[1]! + 0.5) * cellSize,
    (cell[2]! + 0.5) * cellSize,
  ];
}

export function desiredLod(distance: number, bands: LodBands): number {
  if (distance <= bands.actionRange) {
    return 0;
  }
  return distance <= bands.farRange ? 1 : 2;
}

function dist(a: Vec3, b: Vec3): number {
  const dx = a[0] - b[0];
  const dy = a[1] - b[1];
  const dz = a[2] - b[2];
  return Math.sqrt(dx * dx + dy * dy + dz * dz);
}

/**
 * Compare the LOD each chunk should have for the given camera position
 * against what is loaded, and return one transition per chunk that is
 * wrong. Chunks already at their band's level are left untouched.
 */
export function planTransitions(
  camera: Vec3,
  chunks: ChunkPlacement[],
  resident: ReadonlyMap<number, number>,
  bands: LodBands = DEFAULT_BANDS,
): LodTransition[] {
  checkBands(bands);
  const out: LodTransition[] = [];
  for (const chunk of chunks) {
    const want = desiredLod(dist(camera, chunk.center), bands);
    const have = resident.get(chunk.chunkId);
    if (have !== want) {
      out.push({ chunkId: chunk.chunkId, lod: want, previous: have ?? null });
    }
  }
  out.sort((a, b) => a.chunkId - b.chunkId);
  return out;
}
