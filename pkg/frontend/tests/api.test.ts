import { describe, expect, test } from "vitest";

import { ApiError, Client, MutationQueue } from "../src/api";
import { deferred, fakeFetch } from "./helpers";

describe("client", () => {
  test("builds urls and sends json bodies", async () => {
    const { fetch, calls } = fakeFetch(() => ({ json: { id: "p1" } }));
    const client = new Client("http://host:1234/", fetch);
    await client.createProject("p1");
    expect(calls[0]).toMatchObject({
      method: "POST",
      url: "http://host:1234/projects",
      body: { id: "p1" },
    });
  });

  test("query parameters are encoded for preview requests", async () => {
    const { fetch, calls } = fakeFetch(() => ({ json: {} }));
    const client = new Client("http://h", fetch);
    await client.previewOuter("p 1", "cl1", 14.5, 0.25);
    const url = new URL(calls[0].url);
    expect(url.pathname).toBe("/projects/p%201/preview:outer");
    expect(url.searchParams.get("centerline_id")).toBe("cl1");
    expect(url.searchParams.get("s")).toBe("14.5");
    expect(url.searchParams.get("threshold")).toBe("0.25");
  });

  test("structured errors become ApiError with code and status", async () => {
    const { fetch } = fakeFetch(() => ({
      status: 409,
      json: { code: "stale_entity", message: "markers no longer overlap" },
    }));
    const client = new Client("http://h", fetch);
    const err = await client.segmentInner("p", "cl1").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
    expect(err.code).toBe("stale_entity");
    expect(err.message).toContain("overlap");
  });

  test("non-json error bodies still raise with the status line", async () => {
    const { fetch } = fakeFetch(() => ({ status: 502, text: "bad gateway" }));
    const client = new Client("http://h", fetch);
    const err = await client.getProject("p").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe("http_error");
    expect(err.status).toBe(502);
  });

  test("histogram csv is passed through unmodified", async () => {
    const csv = "hu_bin_start,hu_bin_end,voxel_count,volume_mm3\n60,70,12,0.768\n";
    const { fetch } = fakeFetch(() => ({ text: csv }));
    const client = new Client("http://h", fetch);
    expect(await client.histogramCsv("p", "les1")).toBe(csv);
  });

  test("section bytes come back as the raw buffer", async () => {
    const payload = new TextEncoder().encode('{"width":1}\nab');
    const buf = payload.buffer.slice(
      payload.byteOffset,
      payload.byteOffset + payload.byteLength,
    );
    const { fetch } = fakeFetch(() => ({ buffer: buf as ArrayBuffer }));
    const client = new Client("http://h", fetch);
    const got = await client.sectionBytes("p", "cl1", 4.0, 8, 0.2);
    expect(new Uint8Array(got)).toEqual(payload);
  });
});

describe("mutation queue", () => {
  test("runs operations one at a time in submission order", async () => {
    const queue = new MutationQueue();
    const gate1 = deferred<string>();
    const gate2 = deferred<string>();
    const started: string[] = [];
    const finished: string[] = [];

    const p1 = queue.enqueue(async () => {
      started.push("a");
      const v = await gate1.promise;
      finished.push("a");
      return v;
    });
    const p2 = queue.enqueue(async () => {
      started.push("b");
      const v = await gate2.promise;
      finished.push("b");
      return v;
    });

    await Promise.resolve();
    expect(started).toEqual(["a"]); // b waits for a to settle

    gate2.resolve("B"); // resolving b's gate early must not start it
    await Promise.resolve();
    expect(started).toEqual(["a"]);

    gate1.resolve("A");
    expect(await p1).toBe("A");
    expect(await p2).toBe("B");
    expect(finished).toEqual(["a", "b"]);
  });

  test("a failure does not block the next operation", async () => {
    const queue = new MutationQueue();
    const first = queue.enqueue(async () => {
      throw new Error("boom");
    });
    const second = queue.enqueue(async () => "ok");
    await expect(first).rejects.toThrow("boom");
    expect(await second).toBe("ok");
  });
});
