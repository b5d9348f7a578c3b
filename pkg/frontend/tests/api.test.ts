import { describe, expect, it } from "vitest";

import { ApiError, SessionApi } from "../src/api.js";

interface Recorded {
  url: string;
  method: string;
  body?: unknown;
  headers?: Record<string, string>;
}

function mockFetch(
  responder: (url: string, init?: RequestInit) => Response,
): { calls: Recorded[]; fetchFn: typeof fetch } {
  const calls: Recorded[] = [];
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    calls.push({
      url,
      method: init?.method ?? "GET",
      body: init?.body,
      headers: init?.headers as Record<string, string>,
    });
    return responder(url, init);
  }) as typeof fetch;
  return { calls, fetchFn };
}

const json = (status: number, body: unknown) =>
  new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });

describe("SessionApi", () => {
  it("normalizes a trailing slash in the base url", async () => {
    const { calls, fetchFn } = mockFetch(() => json(200, { status: "ok", sessions: 0 }));
    await new SessionApi("http://x:1/", fetchFn).health();
    expect(calls[0].url).toBe("http://x:1/health");
  });

  it("fuse posts the toggle vector as json", async () => {
    const { calls, fetchFn } = mockFetch(() =>
      json(200, { result: "result", revision: 2, result_file: "f", state: "fused" }),
    );
    const api = new SessionApi("http://x:1", fetchFn);
    const resp = await api.fuse("sid", { toggles: [true, false] });
    expect(resp.revision).toBe(2);
    expect(calls[0].url).toBe("http://x:1/sessions/sid/fuse");
    expect(JSON.parse(String(calls[0].body))).toEqual({ toggles: [true, false] });
  });

  it("artifact urls address the documented naming scheme", () => {
    const api = new SessionApi("http://x:1", mockFetch(() => json(200, {})).fetchFn);
    expect(api.artifactUrl("s1", "weight_3")).toBe(
      "http://x:1/sessions/s1/artifacts/weight_3",
    );
  });

  it("surfaces the server's detail message on errors", async () => {
    const { fetchFn } = mockFetch(() => json(409, { detail: "proposals are not ready yet" }));
    const api = new SessionApi("http://x:1", fetchFn);
    await expect(api.fuse("sid", {})).rejects.toThrowError(
      /409: proposals are not ready yet/,
    );
  });

  it("wraps non-json error bodies with the status text", async () => {
    const { fetchFn } = mockFetch(
      () => new Response("boom", { status: 500, statusText: "Internal Server Error" }),
    );
    const api = new SessionApi("http://x:1", fetchFn);
    const err = await api.getSession("sid").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(500);
  });

  it("getArtifact returns bytes with the etag", async () => {
    const { fetchFn } = mockFetch(
      () =>
        new Response(new Uint8Array([1, 2, 3]), {
          status: 200,
          headers: { etag: '"abc"', "content-type": "image/png" },
        }),
    );
    const api = new SessionApi("http://x:1", fetchFn);
    const art = await api.getArtifact("sid", "result");
    expect(new Uint8Array(art.bytes)).toEqual(new Uint8Array([1, 2, 3]));
    expect(art.etag).toBe('"abc"');
    expect(art.mediaType).toBe("image/png");
  });

  it("waitFor polls until the predicate holds", async () => {
    let n = 0;
    const { fetchFn } = mockFetch(() =>
      json(200, {
        id: "sid",
        state: ++n >= 3 ? "fused" : "pending",
        epoch: 1,
        revision: 1,
        degraded: false,
        notes: [],
        n_proposals: 1,
        config: {},
        artifacts: {},
      }),
    );
    const api = new SessionApi("http://x:1", fetchFn);
    const m = await api.waitFor("sid", (x) => x.state === "fused", {
      intervalMs: 1,
    });
    expect(m.state).toBe("fused");
    expect(n).toBe(3);
  });

  it("waitFor times out with the last observed state", async () => {
    const { fetchFn } = mockFetch(() =>
      json(200, {
        id: "sid", state: "pending", epoch: 1, revision: 0, degraded: false,
        notes: [], n_proposals: 0, config: {}, artifacts: {},
      }),
    );
    const api = new SessionApi("http://x:1", fetchFn);
    await expect(
      api.waitFor("sid", (x) => x.state === "fused", { timeoutMs: 30, intervalMs: 5 }),
    ).rejects.toThrowError(/timed out .*pending/);
  });
});
