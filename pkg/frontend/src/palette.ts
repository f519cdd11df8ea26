import type { Taxonomy } from "./api.js";

export type RGB = [number, number, number];

/**
 * Label colors as served by the backend taxonomy. The client never invents
 * label colors of its own; everything label-tinted is looked up here.
 */
export class Palette {
  private readonly colors: RGB[];
  private readonly names: string[];

  private constructor(colors: RGB[], names: string[]) {
    this.colors = colors;
    this.names = names;
  }

  static fromTaxonomy(tax: Taxonomy): Palette {
    const colors: RGB[] = [];
    const names: string[] = [];
    for (const cls of tax.classes) {
      if (cls.id !== colors.length) {
        throw new Error(`taxonomy ids must be contiguous, got ${cls.id}`);
      }
      colors.push([cls.color[0], cls.color[1], cls.color[2]]);
      names.push(cls.name);
    }
    if (colors.length === 0) {
      throw new Error("taxonomy has no classes");
    }
    return new Palette(colors, names);
  }

  get size(): number {
    return this.colors.length;
  }

  has(labelId: number): boolean {
    return Number.isInteger(labelId) && labelId >= 0 && labelId < this.colors.length;
  }

  colorOf(labelId: number): RGB {
    const c = this.colors[labelId];
    if (!c) {
      throw new Error(`label ${labelId} is not in the taxonomy`);
    }
    return [c[0], c[1], c[2]];
  }

  nameOf(labelId: number): string {
    const n = this.names[labelId];
    if (n === undefined) {
      throw new Error(`label ${labelId} is not in the taxonomy`);
    }
    return n;
  }
}

// Cool-to-warm ramp for uncertainty display: low u sits at a cold blue,
// high u at the warmest red. Anchors follow the familiar diverging map.
const WARM_STOPS: Array<[number, RGB]> = [
  [0.0, [59, 76, 192]],
  [0.5, [221, 221, 221]],
  [1.0, [180, 4, 38]],
];

export const WARMEST: RGB = [180, 4, 38];

export function warmColor(u: number): RGB {
  const t = Math.min(1, Math.max(0, u));
  for (let i = 1; i < WARM_STOPS.length; i++) {
    const [t1, c1] = WARM_STOPS[i]!;
    if (t <= t1) {
      const [t0, c0] = WARM_STOPS[i - 1]!;
      const f = t1 === t0 ? 0 : (t - t0) / (t1 - t0);
      return [
        Math.round(c0[0] + f * (c1[0] - c0[0])),
        Math.round(c0[1] + f * (c1[1] - c0[1])),
        Math.round(c0[2] + f * (c1[2] - c0[2])),
      ];
    }
  }
  return [WARMEST[0], WARMEST[1], WARMEST[2]];
}
