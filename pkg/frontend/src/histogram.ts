/** HU histogram panel with the two composition threshold handles.
 *
 * Handles cannot cross (lipid/fibrotic below fibrotic/calcified); moving
 * one recolors the bars locally, but the displayed class volumes always
 * come from a fresh server report, never from client arithmetic. The
 * export button passes the server CSV through unmodified.
 */

import { Client, MutationQueue } from "./api";
import type { ReportDoc, Thresholds } from "./types";

export const HANDLE_MIN_GAP_HU = 1.0;

export type PlaqueClass = "lipid_rich" | "fibrotic" | "calcified";

/** Display color class of a histogram bin under the current handles.
 * Bins are colored by their lower edge, matching the half-open intervals
 * the server uses (a value at a threshold belongs to the class above). */
export function classifyBin(binStartHu: number, thr: Thresholds): PlaqueClass {
  if (binStartHu < thr.t_lipid_fib) return "lipid_rich";
  if (binStartHu < thr.t_fib_calc) return "fibrotic";
  return "calcified";
}

export class HistogramPanel {
  /** Handle positions while dragging (may be unapplied). */
  shown: Thresholds;
  /** Last server-acknowledged report; all displayed numbers read from it. */
  report: ReportDoc | null = null;

  constructor(
    private readonly client: Client,
    private readonly pid: string,
    initial: Thresholds,
    private readonly queue: MutationQueue = new MutationQueue(),
  ) {
    this.shown = { ...initial };
  }

  dragLipidFib(t: number): void {
    this.shown.t_lipid_fib = Math.min(t, this.shown.t_fib_calc - HANDLE_MIN_GAP_HU);
  }

  dragFibCalc(t: number): void {
    this.shown.t_fib_calc = Math.max(t, this.shown.t_lipid_fib + HANDLE_MIN_GAP_HU);
  }

  /** Push the handles to the server and refresh the lesion's report. */
  async apply(lid: string): Promise<ReportDoc> {
    const t = { ...this.shown };
    const report = await this.queue.enqueue(async () => {
      await this.client.putThresholds(this.pid, t);
      return this.client.lesionReport(this.pid, lid);
    });
    this.report = report;
    this.shown = { ...report.thresholds };
    return report;
  }

  /** Class volumes straight from the server report. */
  volumes(): ReportDoc["volumes_mm3"] | null {
    return this.report ? { ...this.report.volumes_mm3 } : null;
  }

  exportCsv(lid: string): Promise<string> {
    return this.client.histogramCsv(this.pid, lid);
  }
}
