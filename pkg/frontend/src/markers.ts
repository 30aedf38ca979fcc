/** Proximal/distal marker handles on the straightened view.
 *
 * Handles render optimistically while dragging; a debounced single PUT
 * reconciles with the server on release, and a rejection snaps the
 * handles back to the last acknowledged pair. The ordering clamp
 * (proximal < distal, 0.5 mm gap) mirrors the server rule so the handle
 * stops instead of bouncing.
 */

import { ApiError, Client, MutationQueue } from "./api";
import type { MarkersDoc } from "./types";

export const MARKER_GAP_MM = 0.5;
export const PUT_DEBOUNCE_MS = 150;

export interface MarkerPair {
  proximal: number;
  distal: number;
}

export class MarkerHandles {
  private acked: MarkerPair;
  private shown: MarkerPair;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pending: Promise<void> = Promise.resolve();

  constructor(
    private readonly client: Client,
    private readonly pid: string,
    private readonly cid: string,
    private readonly totalLength: number,
    initial: MarkerPair,
    private readonly queue: MutationQueue = new MutationQueue(),
    private readonly onRender?: (m: MarkerPair) => void,
    private readonly onReject?: (err: ApiError) => void,
  ) {
    this.acked = { ...initial };
    this.shown = { ...initial };
  }

  get state(): MarkerPair {
    return { ...this.shown };
  }

  dragProximal(s: number): void {
    const hi = this.shown.distal - MARKER_GAP_MM; // stops at distal - gap
    this.shown.proximal = Math.min(Math.max(s, 0), hi);
    this.schedule();
  }

  dragDistal(s: number): void {
    const lo = this.shown.proximal + MARKER_GAP_MM;
    this.shown.distal = Math.min(Math.max(s, lo), this.totalLength);
    this.schedule();
  }

  private schedule(): void {
    this.onRender?.(this.state);
    if (this.timer !== null) {
      clearTimeout(this.timer);
    }
    this.timer = setTimeout(() => {
      this.timer = null;
      this.pending = this.pending.then(() => this.flush());
    }, PUT_DEBOUNCE_MS);
  }

  private async flush(): Promise<void> {
    const target = this.state;
    try {
      const resp = await this.queue.enqueue(() =>
        this.client.putMarkers(this.pid, this.cid, target.proximal, target.distal),
      );
      this.ack(resp.markers);
    } catch (err) {
      // server said no: snap back to the last acknowledged pair
      this.shown = { ...this.acked };
      this.onRender?.(this.state);
      if (err instanceof ApiError) {
        this.onReject?.(err);
        return;
      }
      throw err;
    }
  }

  private ack(m: MarkersDoc): void {
    this.acked = { proximal: m.proximal_s, distal: m.distal_s };
    this.shown = { ...this.acked };
    this.onRender?.(this.state);
  }

  /** For tests and teardown: resolves after any scheduled PUT settled. */
  async idle(): Promise<void> {
    await this.pending;
    await this.queue.idle();
  }
}
