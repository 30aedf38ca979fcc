/** Browser entry point: wires the panels to the DOM. All analysis flows
 * through the HTTP client; this file only moves pixels and events.
 */

import { ApiError, Client, MutationQueue } from "./api";
import { contourPolygon, ContourEditor, sectionIndexFor } from "./contours";
import { HistogramPanel, classifyBin } from "./histogram";
import { MarkerHandles } from "./markers";
import { decodeSectionPayload, windowLevelToRgba } from "./section";
import { SeedPlacement } from "./seeds";
import { OuterThresholdControl } from "./threshold";
import { ToastLog } from "./toast";
import type { ReportDoc, SurfaceDoc } from "./types";
import { ViewState } from "./viewstate";

const CLASS_COLORS: Record<string, string> = {
  lipid_rich: "#d9a03c",
  fibrotic: "#4c8ecb",
  calcified: "#c44f4f",
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class App {
  private readonly client: Client;
  private readonly queue = new MutationQueue();
  private readonly view = new ViewState();
  private readonly seeds = new SeedPlacement();
  private readonly toasts: ToastLog;
  private editor: ContourEditor | null = null;
  private markers: MarkerHandles | null = null;
  private thresholdCtl: OuterThresholdControl | null = null;
  private histogram: HistogramPanel | null = null;
  private cid: string | null = null;
  private lid: string | null = null;
  private inner: SurfaceDoc | null = null;
  private outer: SurfaceDoc | null = null;

  constructor(base: string) {
    this.client = new Client(base);
    this.toasts = new ToastLog((t) => {
      const box = el<HTMLDivElement>("toasts");
      const node = document.createElement("div");
      node.className = "toast";
      node.textContent = `${t.code}: ${t.message}`;
      box.appendChild(node);
      setTimeout(() => node.remove(), 6000);
    });
    this.bind();
  }

  private bind(): void {
    el<HTMLButtonElement>("create-project").onclick = () => {
      void this.guard(async () => {
        const id = el<HTMLInputElement>("project-id").value.trim();
        await this.client.createProject(id);
        this.view.projectId = id;
        const path = el<HTMLInputElement>("volume-path").value.trim();
        if (path) await this.client.registerVolume(id, path);
      });
    };

    el<HTMLCanvasElement>("section-canvas").onclick = (ev) => {
      // seed placement happens in the displayed plane; z from the slice slider
      const canvas = ev.target as HTMLCanvasElement;
      const rect = canvas.getBoundingClientRect();
      const x = ev.clientX - rect.left - canvas.width / 2;
      const y = canvas.height / 2 - (ev.clientY - rect.top);
      const mmPerPx = Number(canvas.dataset.mmPerPx ?? "0.1");
      const z = Number(el<HTMLInputElement>("slice-z").value);
      this.seeds.add([x * mmPerPx, y * mmPerPx, z]);
      el<HTMLButtonElement>("extract").disabled = !this.seeds.canExtract;
    };

    el<HTMLButtonElement>("extract").onclick = () => {
      void this.guard(async () => {
        const pid = this.requireProject();
        const resp = await this.queue.enqueue(() =>
          this.seeds.extract(this.client, pid),
        );
        this.cid = resp.id;
        this.view.setSRange(0, resp.total_length);
        this.initMarkers(resp.total_length);
        await this.refreshSection();
      });
    };

    el<HTMLInputElement>("section-s").oninput = (ev) => {
      this.view.s = Number((ev.target as HTMLInputElement).value);
      this.thresholdCtl?.setDisplayedSection(this.view.s);
      void this.guard(() => this.refreshSection());
    };

    el<HTMLButtonElement>("segment").onclick = () => {
      void this.guard(async () => {
        const pid = this.requireProject();
        const cid = this.requireCenterline();
        const inner = await this.queue.enqueue(() =>
          this.client.segmentInner(pid, cid),
        );
        this.inner = inner.surface;
        const outer = await this.queue.enqueue(() =>
          this.client.segmentOuter(pid, cid),
        );
        this.outer = outer.surface;
        this.editor = new ContourEditor(this.client, pid, this.queue);
        this.thresholdCtl = new OuterThresholdControl(
          this.client,
          pid,
          cid,
          this.view.s,
          0.3,
          this.queue,
          (p) => this.drawPreview(p.inner_radii, p.raw_outer_radii),
        );
        const lesion = await this.queue.enqueue(() =>
          this.client.createLesion(pid, cid),
        );
        this.lid = lesion.id;
        await this.refreshReport();
      });
    };

    el<HTMLInputElement>("outer-threshold").oninput = (ev) => {
      this.thresholdCtl?.slide(Number((ev.target as HTMLInputElement).value));
    };
    el<HTMLButtonElement>("outer-commit").onclick = () => {
      void this.guard(async () => {
        const resp = await this.thresholdCtl!.commit();
        this.outer = resp.surface;
        await this.refreshSection();
      });
    };

    el<HTMLButtonElement>("undo-edit").onclick = () => {
      void this.guard(async () => {
        if (!this.editor?.canUndo) return;
        const resp = await this.editor.undo();
        this.applyCorrection(resp.surface_id, resp.surface, resp.paired_surface);
        await this.refreshSection();
      });
    };

    el<HTMLInputElement>("t-lipid-fib").oninput = (ev) => {
      this.histogram?.dragLipidFib(Number((ev.target as HTMLInputElement).value));
      this.drawHistogram();
    };
    el<HTMLInputElement>("t-fib-calc").oninput = (ev) => {
      this.histogram?.dragFibCalc(Number((ev.target as HTMLInputElement).value));
      this.drawHistogram();
    };
    el<HTMLButtonElement>("apply-thresholds").onclick = () => {
      void this.guard(async () => {
        if (!this.histogram || !this.lid) return;
        const report = await this.histogram.apply(this.lid);
        this.renderReport(report);
      });
    };
    el<HTMLButtonElement>("export-csv").onclick = () => {
      void this.guard(async () => {
        if (!this.histogram || !this.lid) return;
        const text = await this.histogram.exportCsv(this.lid);
        const blob = new Blob([text], { type: "text/csv" });
        const a = document.createElement("a");
        a.href = URL.createObjectURL(blob);
        a.download = `${this.lid}-histogram.csv`;
        a.click();
        URL.revokeObjectURL(a.href);
      });
    };

    el<HTMLInputElement>("napkin-ring").onchange = (ev) => {
      void this.guard(async () => {
        const pid = this.requireProject();
        if (!this.lid) return;
        await this.queue.enqueue(() =>
          this.client.setNapkinRing(pid, this.lid!, (ev.target as HTMLInputElement).checked),
        );
        await this.refreshReport();
      });
    };
  }

  private async guard(op: () => Promise<void>): Promise<void> {
    try {
      await op();
    } catch (err) {
      this.toasts.surface(err);
      if (!(err instanceof ApiError) && !(err instanceof Error)) throw err;
    }
  }

  private requireProject(): string {
    if (!this.view.projectId) throw new Error("create a project first");
    return this.view.projectId;
  }

  private requireCenterline(): string {
    if (!this.cid) throw new Error("extract a centerline first");
    return this.cid;
  }

  private initMarkers(totalLength: number): void {
    const pid = this.requireProject();
    const cid = this.requireCenterline();
    this.markers = new MarkerHandles(
      this.client,
      pid,
      cid,
      totalLength,
      { proximal: 0, distal: totalLength },
      this.queue,
      (m) => {
        el<HTMLInputElement>("marker-proximal").value = String(m.proximal);
        el<HTMLInputElement>("marker-distal").value = String(m.distal);
      },
      (err) => this.toasts.surface(err),
    );
    const prox = el<HTMLInputElement>("marker-proximal");
    const dist = el<HTMLInputElement>("marker-distal");
    prox.max = dist.max = String(totalLength);
    prox.oninput = () => this.markers?.dragProximal(Number(prox.value));
    dist.oninput = () => this.markers?.dragDistal(Number(dist.value));
  }

  private async refreshSection(): Promise<void> {
    const pid = this.requireProject();
    const cid = this.requireCenterline();
    const buf = await this.client.sectionBytes(pid, cid, this.view.s);
    const { header, pixels } = decodeSectionPayload(buf);
    const canvas = el<HTMLCanvasElement>("section-canvas");
    canvas.width = header.width;
    canvas.height = header.height;
    canvas.dataset.mmPerPx = String(header.spacing);
    const rgba = windowLevelToRgba(pixels, this.view.windowLevel, this.view.windowWidth);
    const ctx = canvas.getContext("2d")!;
    ctx.putImageData(new ImageData(rgba, header.width, header.height), 0, 0);
    const pxPerMm = 1 / header.spacing;
    if (this.view.overlays.inner && this.inner) {
      this.strokeContour(ctx, this.inner, header.center_s, pxPerMm, "#58d68d");
    }
    if (this.view.overlays.outer && this.outer) {
      this.strokeContour(ctx, this.outer, header.center_s, pxPerMm, "#e67e22");
    }
  }

  private strokeContour(
    ctx: CanvasRenderingContext2D,
    surface: SurfaceDoc,
    s: number,
    pxPerMm: number,
    color: string,
  ): void {
    const k = sectionIndexFor(surface.arclengths, s);
    const pts = contourPolygon(
      surface.radii[k],
      ctx.canvas.width / 2,
      ctx.canvas.height / 2,
      pxPerMm,
    );
    ctx.strokeStyle = color;
    ctx.beginPath();
    pts.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
    ctx.closePath();
    ctx.stroke();
  }

  private drawPreview(innerRadii: number[], rawOuter: number[]): void {
    const canvas = el<HTMLCanvasElement>("section-canvas");
    const ctx = canvas.getContext("2d")!;
    const pxPerMm = 1 / Number(canvas.dataset.mmPerPx ?? "0.1");
    ctx.strokeStyle = "#f1c40f";
    ctx.setLineDash([4, 3]);
    const pts = contourPolygon(rawOuter, canvas.width / 2, canvas.height / 2, pxPerMm);
    ctx.beginPath();
    pts.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
    ctx.closePath();
    ctx.stroke();
    ctx.setLineDash([]);
    void innerRadii;
  }

  private applyCorrection(
    sid: string,
    surface: SurfaceDoc,
    paired?: SurfaceDoc,
  ): void {
    if (sid.endsWith(".inner")) {
      this.inner = surface;
      if (paired) this.outer = paired;
    } else {
      this.outer = surface;
      if (paired) this.inner = paired;
    }
  }

  private async refreshReport(): Promise<void> {
    const pid = this.requireProject();
    if (!this.lid) return;
    const report = await this.client.lesionReport(pid, this.lid);
    if (!this.histogram) {
      this.histogram = new HistogramPanel(
        this.client,
        pid,
        report.thresholds,
        this.queue,
      );
    }
    this.histogram.report = report;
    this.histogram.shown = { ...report.thresholds };
    this.renderReport(report);
  }

  private renderReport(report: ReportDoc): void {
    el<HTMLSpanElement>("stenosis-pct").textContent =
      report.stenosis.stenosis_area_pct.toFixed(1);
    el<HTMLSpanElement>("total-volume").textContent =
      report.volumes_mm3.total.toFixed(2);
    for (const cls of ["lipid_rich", "fibrotic", "calcified"] as const) {
      el<HTMLSpanElement>(`vol-${cls}`).textContent =
        report.volumes_mm3[cls].toFixed(2);
    }
    el<HTMLSpanElement>("flags").textContent = [
      report.low_attenuation_flag ? "low-attenuation" : null,
      report.napkin_ring_flag ? "napkin-ring" : null,
      report.stale ? "stale" : null,
    ]
      .filter(Boolean)
      .join(", ");
    this.drawHistogram();
  }

  private drawHistogram(): void {
    const report = this.histogram?.report;
    if (!report) return;
    const canvas = el<HTMLCanvasElement>("histogram-canvas");
    const ctx = canvas.getContext("2d")!;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    const bins = report.histogram;
    if (bins.length === 0) return;
    const maxCount = Math.max(...bins.map(([, n]) => n));
    const bw = canvas.width / bins.length;
    bins.forEach(([start, count], i) => {
      ctx.fillStyle = CLASS_COLORS[classifyBin(start, this.histogram!.shown)];
      const h = (count / maxCount) * (canvas.height - 4);
      ctx.fillRect(i * bw, canvas.height - h, Math.max(bw - 1, 1), h);
    });
  }
}

declare global {
  interface Window {
    coroplaqApp?: App;
  }
}

window.addEventListener("DOMContentLoaded", () => {
  const base = new URLSearchParams(window.location.search).get("api") ?? "http://127.0.0.1:8787";
  window.coroplaqApp = new App(base);
});
