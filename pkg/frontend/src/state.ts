// ============================================
// SESSION STATE & PURE VIEW HELPERS
// ============================================
//
// Local view state only. Server data (samples, trials, map records) is
// cached as received and re-derived with the pure helpers below; nothing
// here invents a class or a probability.

import type { MapRecord } from "./api.js";

/** Mark colors, assigned by class index. Must stay in sync with the colors
 * the server bakes into overlay PNGs so both renderings agree. */
export const MARK_PALETTE: ReadonlyArray<readonly [number, number, number]> = [
  [255, 255, 255],
  [255, 80, 80],
  [80, 255, 80],
  [90, 130, 255],
  [255, 255, 0],
  [255, 0, 255],
  [0, 255, 255],
  [255, 160, 0],
];

export function markColor(tag: string, classes: string[]): string {
  const idx = classes.indexOf(tag);
  const [r, g, b] = MARK_PALETTE[(idx < 0 ? 0 : idx) % MARK_PALETTE.length];
  return `rgb(${r}, ${g}, ${b})`;
}

export function winningProbability(rec: MapRecord): number {
  if (!rec.p || rec.p.length === 0) return 0;
  return Math.max(...rec.p);
}

/**
 * Client-side mirror of the server's map filtering: informative records
 * whose winning probability is at or above the limiter (boundary included),
 * optionally narrowed to a single class. Fetch once at limiter 0, re-filter
 * here on every slider move — for any limiter this must equal what
 * GET /api/map would return at that value.
 */
export function visibleRecords(
  records: MapRecord[],
  limiter: number,
  classFilter: string | null = null,
): MapRecord[] {
  return records.filter(
    (rec) =>
      rec.informative &&
      winningProbability(rec) >= limiter &&
      (classFilter === null || rec.class === classFilter),
  );
}

export function tooltipText(rec: MapRecord, classes: string[]): string {
  if (!rec.p) return "uninformative";
  const probs = rec.p;
  return classes.map((tag, i) => `${tag}: ${probs[i].toFixed(3)}`).join("\n");
}

// --------------------------------------------
// trial log rows
// --------------------------------------------

export interface TrialRow {
  index: number;
  c: number;
  gamma: number;
  cv_accuracy: number;
}

/** One line of the training status stream is one trial's JSON document. */
export function parseTrialLine(line: string): TrialRow {
  const doc = JSON.parse(line);
  return {
    index: doc.index,
    c: doc.c,
    gamma: doc.gamma,
    cv_accuracy: doc.cv_accuracy,
  };
}

export function formatTrialRow(row: TrialRow): string {
  const c = row.c.toExponential(3);
  const gamma = row.gamma.toExponential(3);
  return `#${String(row.index).padStart(3, "0")}  C=${c}  gamma=${gamma}  acc=${row.cv_accuracy.toFixed(4)}`;
}

// --------------------------------------------
// coordinates
// --------------------------------------------

/**
 * Map a pointer event back to image pixels. The stage renders the image at
 * its natural size and zooms with a CSS transform, so undoing the zoom
 * factor recovers source coordinates.
 */
export function toImagePoint(
  clientX: number,
  clientY: number,
  stageRect: { left: number; top: number },
  scale: number,
): { x: number; y: number } {
  return {
    x: Math.round((clientX - stageRect.left) / scale),
    y: Math.round((clientY - stageRect.top) / scale),
  };
}

// --------------------------------------------
// the session itself
// --------------------------------------------

const ZOOM_STEPS = [0.25, 0.5, 0.75, 1, 1.5, 2, 3, 4];

export class SessionView {
  readonly classes: string[];
  readonly radius: number;
  image: string | null = null;
  selectedClass: string;
  limiter = 0.3;
  classFilter: string | null = null;
  correctionMode = false;
  scale = 1;
  pending: { x: number; y: number } | null = null;

  constructor(classes: string[], radius: number) {
    if (classes.length === 0) {
      throw new Error("project has no classes");
    }
    this.classes = [...classes];
    this.radius = radius;
    this.selectedClass = this.classes[0];
  }

  setClass(tag: string): void {
    if (!this.classes.includes(tag)) {
      throw new Error(`unknown class ${JSON.stringify(tag)}`);
    }
    this.selectedClass = tag;
  }

  setClassFilter(tag: string | null): void {
    if (tag !== null && !this.classes.includes(tag)) {
      throw new Error(`unknown class ${JSON.stringify(tag)}`);
    }
    this.classFilter = tag;
  }

  /** Sliders can feed anything; the session keeps the invariant 0 <= limiter <= 1. */
  setLimiter(value: number): void {
    if (Number.isNaN(value)) value = 0;
    this.limiter = Math.min(1, Math.max(0, value));
  }

  placePending(x: number, y: number): void {
    this.pending = { x, y };
  }

  clearPending(): void {
    this.pending = null;
  }

  zoomIn(): void {
    const above = ZOOM_STEPS.filter((s) => s > this.scale);
    if (above.length > 0) this.scale = above[0];
  }

  zoomOut(): void {
    const below = ZOOM_STEPS.filter((s) => s < this.scale);
    if (below.length > 0) this.scale = below[below.length - 1];
  }
}
