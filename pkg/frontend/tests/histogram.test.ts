import { describe, expect, test } from "vitest";

import { Client } from "../src/api";
import { classifyBin, HANDLE_MIN_GAP_HU, HistogramPanel } from "../src/histogram";
import type { ReportDoc, Thresholds } from "../src/types";
import { fakeFetch, type RecordedCall } from "./helpers";

/** Report fixture mirroring the server's partition rule: the same 2000
 * voxels re-bucketed under whatever thresholds were PUT last. */
function reportFor(t: Thresholds): ReportDoc {
  const bins: [number, number][] = [
    [-60, 200],
    [20, 300],
    [60, 900],
    [150, 600],
  ];
  const counts = { lipid_rich: 0, fibrotic: 0, calcified: 0 };
  for (const [start, n] of bins) {
    counts[classifyBin(start, t)] += n;
  }
  const vv = 0.064;
  return {
    lesion_id: "les1",
    thresholds: { ...t },
    voxel_count: 2000,
    voxel_volume_mm3: vv,
    counts,
    volumes_mm3: {
      lipid_rich: counts.lipid_rich * vv,
      fibrotic: counts.fibrotic * vv,
      calcified: counts.calcified * vv,
      total: 2000 * vv,
    },
    stenosis: {
      arclengths: [4],
      lumen_areas: [8],
      vessel_areas: [21],
      stenosis_per_position: [0],
      stenosis_area_pct: 0,
      stenosis_arclength: 4,
      remodeling_index: 1,
    },
    histogram: bins,
    low_attenuation_flag: false,
    napkin_ring_flag: false,
    stale: false,
  };
}

function panelFixture() {
  let lastThresholds: Thresholds = { t_lipid_fib: 30, t_fib_calc: 130 };
  const { fetch, calls } = fakeFetch((call: RecordedCall) => {
    if (call.method === "PUT") {
      lastThresholds = call.body as Thresholds;
      return { json: { thresholds: lastThresholds } };
    }
    return { json: reportFor(lastThresholds) };
  });
  const panel = new HistogramPanel(new Client("http://h", fetch), "p", {
    t_lipid_fib: 30,
    t_fib_calc: 130,
  });
  return { panel, calls };
}

describe("bin classification", () => {
  const t: Thresholds = { t_lipid_fib: 30, t_fib_calc: 130 };

  test("half-open intervals match the server rule", () => {
    expect(classifyBin(29, t)).toBe("lipid_rich");
    expect(classifyBin(30, t)).toBe("fibrotic"); // at the cut: class above
    expect(classifyBin(129, t)).toBe("fibrotic");
    expect(classifyBin(130, t)).toBe("calcified");
  });
});

describe("histogram panel", () => {
  test("handles cannot cross in either direction", () => {
    const { panel } = panelFixture();
    panel.dragLipidFib(500); // tries to pass t_fib_calc = 130
    expect(panel.shown.t_lipid_fib).toBe(130 - HANDLE_MIN_GAP_HU);
    panel.dragFibCalc(-200); // tries to pass the other handle
    expect(panel.shown.t_fib_calc).toBe(panel.shown.t_lipid_fib + HANDLE_MIN_GAP_HU);
  });

  test("moving a handle repartitions the classes with the total constant", async () => {
    const { panel } = panelFixture();
    const before = await panel.apply("les1");
    panel.dragFibCalc(50); // pulls the 60 HU bin into calcified...
    panel.dragLipidFib(10); // ...and the 20 HU bin out of lipid
    const after = await panel.apply("les1");

    expect(after.counts).not.toEqual(before.counts);
    expect(after.counts.calcified).toBeGreaterThan(before.counts.calcified);
    expect(after.volumes_mm3.total).toBe(before.volumes_mm3.total);
    expect(after.voxel_count).toBe(before.voxel_count);
    // panel numbers are whatever the server reported, nothing recomputed
    expect(panel.volumes()).toEqual(after.volumes_mm3);
    expect(panel.shown).toEqual(after.thresholds);
  });

  test("apply PUTs thresholds before fetching the report", async () => {
    const { panel, calls } = panelFixture();
    panel.dragLipidFib(10);
    await panel.apply("les1");
    expect(calls.map((c) => c.method)).toEqual(["PUT", "GET"]);
    expect(calls[0].body).toMatchObject({ t_lipid_fib: 10 });
    expect(calls[1].url).toContain("/lesions/les1/report");
  });

  test("csv export returns the exact server text", async () => {
    const csv = "hu_bin_start,hu_bin_end,voxel_count,volume_mm3\n20,30,300,19.2\n";
    const { fetch } = fakeFetch(() => ({ text: csv }));
    const panel = new HistogramPanel(new Client("http://h", fetch), "p", {
      t_lipid_fib: 30,
      t_fib_calc: 130,
    });
    expect(await panel.exportCsv("les1")).toBe(csv);
  });
});
