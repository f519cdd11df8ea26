import type { Palette } from "./palette.js";

export type ViewMode = "rgb" | "labels" | "unlabeled-only" | "uncertainty";

export const VIEW_MODES: readonly ViewMode[] = [
  "rgb",
  "labels",
  "unlabeled-only",
  "uncertainty",
];

export interface CameraPose {
  position: [number, number, number];
  yaw: number;
  pitch: number;
}

/**
 * Everything the rest of the UI consults before acting: which scene and
 * session are active, what the brush does, how faces are drawn, and which
 * LOD is resident for each chunk. Setters enforce the session rules so a
 * stray widget cannot put the viewer into a state the server would reject.
 */
export class ViewerState {
  private readonly palette: Palette;
  private readonly resident = new Map<number, number>();
  private mode: ViewMode = "labels";
  private label = 1;
  private radius = 0.5;

  sceneId: string | null = null;
  sessionId: string | null = null;
  pose: CameraPose = { position: [0, 0, 0], yaw: 0, pitch: 0 };

  constructor(palette: Palette) {
    this.palette = palette;
  }

  get viewMode(): ViewMode {
    return this.mode;
  }

  setViewMode(mode: ViewMode): void {
    if (!VIEW_MODES.includes(mode)) {
      throw new Error(`unknown view mode '${mode}'`);
    }
    this.mode = mode;
  }

  get activeLabel(): number {
    return this.label;
  }

  setActiveLabel(labelId: number): void {
    if (!this.palette.has(labelId)) {
      throw new Error(`label ${labelId} is not in the taxonomy`);
    }
    this.label = labelId;
  }

  get brushRadius(): number {
    return this.radius;
  }

  setBrushRadius(radius: number): void {
    if (!(radius > 0)) {
      throw new Error("brush radius must be positive");
    }
    this.radius = radius;
  }

  /** chunk id -> resident LOD level; at most one level per chunk. */
  get residentLods(): ReadonlyMap<number, number> {
    return this.resident;
  }

  setResident(chunkId: number, lod: number): void {
    if (lod !== 0 && lod !== 1 && lod !== 2) {
      throw new Error(`lod must be 0, 1, or 2, got ${lod}`);
    }
    this.resident.set(chunkId, lod);
  }

  evict(chunkId: number): void {
    this.resident.delete(chunkId);
  }

  /** Painting is allowed only on chunks resident at full resolution. */
  canPaint(chunkId: number): boolean {
    return this.resident.get(chunkId) === 0;
  }
}

/**
 * Gate between input handling and the stroke queue: strokes aimed at a
 * chunk that is not resident at LOD 0 are dropped on the client, before
 * any request is made. Returns whether the stroke was enqueued.
 */
export function submitPaintIfAllowed<S>(
  state: ViewerState,
  queue: { submit(stroke: S): void },
  chunkId: number,
  stroke: S,
): boolean {
  if (!state.canPaint(chunkId)) {
    return false;
  }
  queue.submit(stroke);
  return true;
}
