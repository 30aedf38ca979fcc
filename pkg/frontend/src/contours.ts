/** Contour rendering and point dragging on cross-section views.
 *
 * A drag grabs a lattice vertex (section k, ray j), so the pre-edit
 * radius at the constraint point is an exact stored value; undo re-issues
 * the correction with that original radius as the target, which inverts
 * the edit through the same event-logged server operation.
 */

import { Client, MutationQueue } from "./api";
import type { ConstraintDoc, CorrectResponse, SurfaceDoc } from "./types";

/** Canvas polygon of one section's contour (math orientation, y up). */
export function contourPolygon(
  radii: number[],
  cx: number,
  cy: number,
  pxPerMm: number,
): Array<[number, number]> {
  const n = radii.length;
  const pts: Array<[number, number]> = [];
  for (let j = 0; j < n; j++) {
    const theta = (2 * Math.PI * j) / n;
    pts.push([
      cx + radii[j] * Math.cos(theta) * pxPerMm,
      cy - radii[j] * Math.sin(theta) * pxPerMm,
    ]);
  }
  return pts;
}

/** Ray index whose angle is closest to theta (radians, any branch). */
export function nearestAngleIndex(theta: number, nAngles: number): number {
  const tau = 2 * Math.PI;
  const t = ((theta % tau) + tau) % tau;
  return Math.round((t / tau) * nAngles) % nAngles;
}

/** Section index whose arclength is nearest to s (server's preview rule). */
export function sectionIndexFor(arclengths: number[], s: number): number {
  let best = 0;
  let bestDist = Infinity;
  for (let k = 0; k < arclengths.length; k++) {
    const d = Math.abs(arclengths[k] - s);
    if (d < bestDist) {
      best = k;
      bestDist = d;
    }
  }
  return best;
}

interface UndoEntry {
  sid: string;
  constraints: ConstraintDoc[];
}

export class ContourEditor {
  private undoStack: UndoEntry[] = [];

  constructor(
    private readonly client: Client,
    private readonly pid: string,
    private readonly queue: MutationQueue = new MutationQueue(),
  ) {}

  get canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  /** Drag vertex (k, j) of `surface` to a new radius. The server applies
   * the radial-basis correction and clamps the pair ordering; its response
   * is what the view renders, including any clamped neighbors. */
  async dragVertex(
    sid: string,
    surface: SurfaceDoc,
    k: number,
    j: number,
    newRadius: number,
    sigmaS = 2.0,
  ): Promise<CorrectResponse> {
    const n = surface.radii[k].length;
    const s = surface.arclengths[k];
    const theta = (2 * Math.PI * j) / n;
    const previous = surface.radii[k][j];
    const resp = await this.queue.enqueue(() =>
      this.client.correctSurface(this.pid, sid, [
        { s, theta, target_radius: newRadius, sigma_s: sigmaS },
      ]),
    );
    this.undoStack.push({
      sid,
      constraints: [{ s, theta, target_radius: previous, sigma_s: sigmaS }],
    });
    return resp;
  }

  /** Re-issue the inverse correction for the most recent drag. */
  async undo(): Promise<CorrectResponse> {
    const entry = this.undoStack.pop();
    if (!entry) {
      throw new Error("nothing to undo");
    }
    return this.queue.enqueue(() =>
      this.client.correctSurface(this.pid, entry.sid, entry.constraints),
    );
  }
}
