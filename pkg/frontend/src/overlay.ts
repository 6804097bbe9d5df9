// ============================================
// MAP OVERLAY LAYER
// ============================================
//
// Renders map records as small colored marks in an absolutely-positioned
// layer on top of the image, plus the pending-sample circle that previews
// exactly the disc the classifier will see. Coordinates are image pixels;
// zooming happens on the shared stage transform, never here.

import type { MapRecord } from "./api.js";
import { markColor, tooltipText, visibleRecords } from "./state.js";

const MARK_SIZE = 7; // px, odd so the mark centers on the grid point

export class OverlayLayer {
  private readonly layer: HTMLElement;
  private readonly tooltip: HTMLElement;
  private readonly hint: HTMLElement;

  constructor(layer: HTMLElement, tooltip: HTMLElement, hint: HTMLElement) {
    this.layer = layer;
    this.tooltip = tooltip;
    this.hint = hint;
  }

  clearMarks(): void {
    for (const el of Array.from(this.layer.querySelectorAll(".mark"))) {
      el.remove();
    }
    this.hideTooltip();
  }

  /** Replace all marks with the records passing the limiter/class filter.
   * Returns how many are shown. */
  render(
    records: MapRecord[],
    classes: string[],
    limiter: number,
    classFilter: string | null,
  ): number {
    this.clearMarks();
    const shown = visibleRecords(records, limiter, classFilter);
    for (const rec of shown) {
      this.layer.appendChild(this.buildMark(rec, classes));
    }
    return shown.length;
  }

  private buildMark(rec: MapRecord, classes: string[]): HTMLElement {
    const el = document.createElement("div");
    el.className = "mark";
    el.style.left = `${rec.x - (MARK_SIZE - 1) / 2}px`;
    el.style.top = `${rec.y - (MARK_SIZE - 1) / 2}px`;
    el.style.width = `${MARK_SIZE}px`;
    el.style.height = `${MARK_SIZE}px`;
    el.style.background = rec.class === null ? "transparent" : markColor(rec.class, classes);
    el.dataset.x = String(rec.x);
    el.dataset.y = String(rec.y);
    if (rec.class !== null) el.dataset.class = rec.class;
    el.addEventListener("mouseenter", () => this.showTooltip(rec, classes));
    el.addEventListener("mouseleave", () => this.hideTooltip());
    return el;
  }

  showTooltip(rec: MapRecord, classes: string[]): void {
    this.tooltip.textContent = `(${rec.x}, ${rec.y})\n${tooltipText(rec, classes)}`;
    this.tooltip.style.left = `${rec.x + 10}px`;
    this.tooltip.style.top = `${rec.y + 10}px`;
    this.tooltip.classList.remove("hidden");
  }

  hideTooltip(): void {
    this.tooltip.classList.add("hidden");
  }

  /** Circle preview for a pending sample: the classifier sees nothing
   * outside this disc, so the user should too. */
  showPending(x: number, y: number, radius: number): void {
    this.clearPending();
    const el = document.createElement("div");
    el.className = "pending-circle";
    el.style.left = `${x - radius}px`;
    el.style.top = `${y - radius}px`;
    el.style.width = `${2 * radius}px`;
    el.style.height = `${2 * radius}px`;
    this.layer.appendChild(el);
  }

  clearPending(): void {
    for (const el of Array.from(this.layer.querySelectorAll(".pending-circle"))) {
      el.remove();
    }
  }

  /** Message shown where marks would be (e.g. before a model exists). */
  setHint(text: string | null): void {
    if (text === null) {
      this.hint.textContent = "";
      this.hint.classList.add("hidden");
    } else {
      this.hint.textContent = text;
      this.hint.classList.remove("hidden");
    }
  }
}
