/** Outer-wall threshold slider.
 *
 * While sliding, a debounced preview request re-segments only the
 * displayed cross-section (raw, pre-smoothing radii); commit applies the
 * chosen threshold to the whole section range, which replaces any stale
 * outer surface. Raising the threshold moves every raw radius outward or
 * leaves it in place, never inward; `neverNarrower` mirrors that core
 * property for display checks.
 */

import { Client, MutationQueue } from "./api";
import type { PreviewResponse, SurfaceResponse } from "./types";

export const PREVIEW_DEBOUNCE_MS = 150;

export function neverNarrower(lower: number[], higher: number[]): boolean {
  if (lower.length !== higher.length) return false;
  return higher.every((r, i) => r >= lower[i] - 1e-12);
}

export class OuterThresholdControl {
  private _value: number;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pending: Promise<void> = Promise.resolve();
  lastPreview: PreviewResponse | null = null;

  constructor(
    private readonly client: Client,
    private readonly pid: string,
    private readonly cid: string,
    private displayedS: number,
    initial = 0.3,
    private readonly queue: MutationQueue = new MutationQueue(),
    private readonly onPreview?: (p: PreviewResponse) => void,
  ) {
    this._value = initial;
  }

  get value(): number {
    return this._value;
  }

  setDisplayedSection(s: number): void {
    this.displayedS = s;
  }

  slide(t: number): void {
    this._value = Math.min(Math.max(t, 0), 1);
    if (this.timer !== null) {
      clearTimeout(this.timer);
    }
    this.timer = setTimeout(() => {
      this.timer = null;
      this.pending = this.pending.then(() => this.preview());
    }, PREVIEW_DEBOUNCE_MS);
  }

  private async preview(): Promise<void> {
    const p = await this.client.previewOuter(
      this.pid,
      this.cid,
      this.displayedS,
      this._value,
    );
    this.lastPreview = p;
    this.onPreview?.(p);
  }

  /** Apply the slider value to the whole marked range. */
  commit(): Promise<SurfaceResponse> {
    if (this.timer !== null) {
      clearTimeout(this.timer); // the full recompute supersedes the preview
      this.timer = null;
    }
    return this.queue.enqueue(() =>
      this.client.segmentOuter(this.pid, this.cid, this._value),
    );
  }

  async idle(): Promise<void> {
    await this.pending;
    await this.queue.idle();
  }
}
