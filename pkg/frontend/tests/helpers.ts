/** Test doubles: an in-memory fetch that records every request and
 * serves canned replies.
 */

import type { FetchLike } from "../src/api";

export interface RecordedCall {
  method: string;
  url: string;
  body: unknown;
}

export interface CannedReply {
  status?: number;
  json?: unknown;
  text?: string;
  buffer?: ArrayBuffer;
  delayMs?: number;
}

export type Responder = (call: RecordedCall) => CannedReply;

export function fakeFetch(respond: Responder): {
  fetch: FetchLike;
  calls: RecordedCall[];
} {
  const calls: RecordedCall[] = [];
  const impl: FetchLike = async (url, init) => {
    const call: RecordedCall = {
      method: init?.method ?? "GET",
      url,
      body: init?.body ? JSON.parse(init.body as string) : undefined,
    };
    calls.push(call);
    const reply = respond(call);
    if (reply.delayMs) {
      await new Promise((r) => setTimeout(r, reply.delayMs));
    }
    const status = reply.status ?? 200;
    if (reply.buffer !== undefined) {
      return new Response(reply.buffer, {
        status,
        headers: { "content-type": "application/octet-stream" },
      });
    }
    if (reply.text !== undefined) {
      return new Response(reply.text, {
        status,
        headers: { "content-type": "text/csv" },
      });
    }
    return new Response(JSON.stringify(reply.json ?? {}), {
      status,
      headers: { "content-type": "application/json" },
    });
  };
  return { fetch: impl, calls };
}

/** Deferred promise for hand-stepped async tests. */
export function deferred<T>(): {
  promise: Promise<T>;
  resolve: (v: T) => void;
  reject: (e: unknown) => void;
} {
  let resolve!: (v: T) => void;
  let reject!: (e: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}
