import { Palette, RGB, warmColor } from "./palette.js";
import type { ViewMode } from "./viewerState.js";

export const VOID_LABEL = 0;

/**
 * Client-side mirror of the server session's working label map. The server
 * is the paint authority: entries only change by applying the affected-id
 * list that comes back from a stroke request, so after any stroke sequence
 * this map and the server's agree. Erased faces drop out of the map
 * entirely, same as on the server.
 */
export class LabelStore {
  private readonly palette: Palette;
  private readonly labels = new Map<number, number>();

  constructor(palette: Palette) {
    this.palette = palette;
  }

  applyStroke(affected: number[], label: number): void {
    if (label === VOID_LABEL) {
      for (const id of affected) {
        this.labels.delete(id);
      }
      return;
    }
    if (!this.palette.has(label)) {
      throw new Error(`label ${label} is not in the taxonomy`);
    }
    for (const id of affected) {
      this.labels.set(id, label);
    }
  }

  labelOf(faceId: number): number {
    return this.labels.get(faceId) ?? VOID_LABEL;
  }

  get labeledCount(): number {
    return this.labels.size;
  }

  clear(): void {
    this.labels.clear();
  }

  /** Same shape as the server's export payload: non-void entries only. */
  asExportMap(): Record<string, number> {
    const out: Record<string, number> = {};
    for (const id of [...this.labels.keys()].sort((a, b) => a - b)) {
      out[String(id)] = this.labels.get(id)!;
    }
    return out;
  }

  /**
   * Color a face for the active view mode, or null when the face should
   * not be drawn at all (unlabeled-only hides what is already done).
   */
  faceColor(
    faceId: number,
    mode: ViewMode,
    geometryColor: RGB,
    uncertainty?: ReadonlyMap<number, number>,
  ): RGB | null {
    const label = this.labelOf(faceId);
    switch (mode) {
      case "rgb":
        return geometryColor;
      case "labels":
        return label === VOID_LABEL ? geometryColor : this.palette.colorOf(label);
      case "unlabeled-only":
        return label === VOID_LABEL ? geometryColor : null;
      case "uncertainty":
        return warmColor(uncertainty?.get(faceId) ?? 0);
    }
  }
}
