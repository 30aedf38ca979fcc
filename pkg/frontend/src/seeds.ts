/** Seed placement on the axial view: one click tracks from a single
 * seed, two clicks extract between a pair, a third click starts over.
 */

import type { Client } from "./api";
import type { ExtractMode, ExtractResponse } from "./types";

export type WorldPoint = [number, number, number];

export class SeedPlacement {
  private clicks: WorldPoint[] = [];

  add(p: WorldPoint): void {
    if (this.clicks.length >= 2) {
      this.clicks = [];
    }
    this.clicks.push([p[0], p[1], p[2]]);
  }

  clear(): void {
    this.clicks = [];
  }

  get seeds(): WorldPoint[] {
    return this.clicks.map((p) => [p[0], p[1], p[2]]);
  }

  get mode(): ExtractMode | null {
    if (this.clicks.length === 1) return "single_seed";
    if (this.clicks.length === 2) return "two_seed";
    return null;
  }

  /** Drives the extract button's disabled state. */
  get canExtract(): boolean {
    return this.mode !== null;
  }

  async extract(
    client: Client,
    pid: string,
    branchLabel?: string,
  ): Promise<ExtractResponse> {
    const mode = this.mode;
    if (mode === null) {
      throw new Error("no seeds placed");
    }
    return client.extractCenterline(pid, this.seeds, mode, branchLabel);
  }
}
