import { describe, expect, test } from "vitest";

import { ApiError, Client } from "../src/api";
import { deiColor } from "../src/colormap";
import { SeedPlacement } from "../src/seeds";
import { ToastLog } from "../src/toast";
import { ViewState } from "../src/viewstate";
import { fakeFetch } from "./helpers";

describe("seed placement", () => {
  test("click count selects the extraction mode", () => {
    const seeds = new SeedPlacement();
    expect(seeds.mode).toBeNull();
    expect(seeds.canExtract).toBe(false); // extract button disabled

    seeds.add([0, 0, -7]);
    expect(seeds.mode).toBe("single_seed");
    expect(seeds.canExtract).toBe(true);

    seeds.add([0, 0, 7]);
    expect(seeds.mode).toBe("two_seed");

    seeds.add([1, 1, 0]); // third click starts a fresh pair
    expect(seeds.mode).toBe("single_seed");
    expect(seeds.seeds).toEqual([[1, 1, 0]]);
  });

  test("extract posts the seeds in the chosen mode", async () => {
    const { fetch, calls } = fakeFetch(() => ({
      json: {
        id: "cl1",
        centerline: { id: "cl1", branch_label: "LAD", points: [[0, 0, -7]], warnings: [] },
        total_length: 14,
      },
    }));
    const seeds = new SeedPlacement();
    seeds.add([0, 0, -7]);
    seeds.add([0, 0, 7]);
    const resp = await seeds.extract(new Client("http://h", fetch), "p", "LAD");
    expect(resp.total_length).toBe(14);
    expect(calls[0].body).toMatchObject({
      seeds: [
        [0, 0, -7],
        [0, 0, 7],
      ],
      mode: "two_seed",
      branch_label: "LAD",
    });
  });

  test("extract without seeds is refused locally", async () => {
    const { fetch, calls } = fakeFetch(() => ({ json: {} }));
    const seeds = new SeedPlacement();
    await expect(seeds.extract(new Client("http://h", fetch), "p")).rejects.toThrow(
      /no seeds/,
    );
    expect(calls.length).toBe(0); // never reaches the server
  });
});

describe("toast log", () => {
  test("surfaces structured errors with their machine code", () => {
    const shown: string[] = [];
    const log = new ToastLog((t) => shown.push(`${t.code}: ${t.message}`));
    const t = log.surface(new ApiError(400, "no_vessel_at_seed", "seed sits in background"));
    expect(t.code).toBe("no_vessel_at_seed");
    expect(shown).toEqual(["no_vessel_at_seed: seed sits in background"]);
    log.surface(new Error("plain failure"));
    expect(log.toasts[1]).toEqual({ code: "client_error", message: "plain failure" });
  });
});

describe("view state", () => {
  test("cross-section position clamps to the arclength range", () => {
    const v = new ViewState();
    v.setSRange(2, 26);
    v.s = 40;
    expect(v.s).toBe(26);
    v.s = -3;
    expect(v.s).toBe(2);
    expect(() => v.setSRange(5, 1)).toThrow(RangeError);
  });

  test("window width must stay positive", () => {
    const v = new ViewState();
    v.setWindow(300, 900);
    expect(v.windowLevel).toBe(300);
    expect(() => v.setWindow(0, 0)).toThrow(RangeError);
    expect(v.windowWidth).toBe(900); // rejected update leaves state intact
  });

  test("overlay toggles flip and report their new state", () => {
    const v = new ViewState();
    expect(v.overlays.dei).toBe(false);
    expect(v.toggle("dei")).toBe(true);
    expect(v.toggle("dei")).toBe(false);
  });
});

describe("dei colormap", () => {
  test("diverges around zero and clamps at the display range", () => {
    expect(deiColor(0)).toEqual([255, 255, 255, 255]);
    const negative = deiColor(-0.05);
    const positive = deiColor(0.05);
    expect(negative[2]).toBe(255); // blue end
    expect(negative[0]).toBe(0);
    expect(positive[0]).toBe(255); // red end
    expect(positive[2]).toBe(0);
    expect(deiColor(-5)).toEqual(negative); // clamped
    expect(deiColor(5)).toEqual(positive);
    expect(() => deiColor(0.01, 0)).toThrow(RangeError);
  });
});
