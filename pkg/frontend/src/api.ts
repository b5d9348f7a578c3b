/** Typed client for the session service HTTP API.
 *
 * The UI never computes imagery; everything rendered comes back from these
 * endpoints as PNG bytes. All methods throw `ApiError` on non-2xx responses
 * so callers can surface the server's own message in a notice.
 */

export type SessionState = "pending" | "proposed" | "fused";

export interface SessionManifest {
  id: string;
  state: SessionState;
  epoch: number;
  revision: number;
  degraded: boolean;
  notes: string[];
  n_proposals: number;
  config: Record<string, unknown>;
  artifacts: Record<string, string>;
}

export interface FuseRequest {
  toggles?: boolean[];
  tau?: number;
  gamma?: number;
}

export interface FuseResponse {
  result: string;
  revision: number;
  result_file: string;
  state: SessionState;
}

export interface ArtifactResponse {
  bytes: ArrayBuffer;
  etag: string | null;
  mediaType: string | null;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function raiseForStatus(resp: Response): Promise<void> {
  if (resp.ok) return;
  let detail = resp.statusText || String(resp.status);
  try {
    const body = (await resp.json()) as { detail?: unknown };
    if (body && body.detail !== undefined) detail = String(body.detail);
  } catch {
    /* non-JSON error body: keep the status text */
  }
  throw new ApiError(resp.status, detail);
}

export class SessionApi {
  constructor(
    private base: string,
    private fetchFn: typeof fetch = fetch,
  ) {
    this.base = base.replace(/\/+$/, "");
  }

  async health(): Promise<{ status: string; sessions: number }> {
    const resp = await this.fetchFn(`${this.base}/health`);
    await raiseForStatus(resp);
    return resp.json();
  }

  async createSession(
    target: Blob,
    mask: Blob,
    source: Blob,
    config?: Record<string, unknown>,
  ): Promise<{ id: string; state: SessionState }> {
    const form = new FormData();
    form.append("target", target, "target.png");
    form.append("mask", mask, "mask.png");
    form.append("source", source, "source.png");
    if (config) form.append("config", JSON.stringify(config));
    const resp = await this.fetchFn(`${this.base}/sessions`, {
      method: "POST",
      body: form,
    });
    await raiseForStatus(resp);
    return resp.json();
  }

  async getSession(id: string): Promise<SessionManifest> {
    const resp = await this.fetchFn(`${this.base}/sessions/${id}`);
    await raiseForStatus(resp);
    return resp.json();
  }

  /** URL for <img src>; rendering is a straight PNG passthrough. */
  artifactUrl(id: string, name: string): string {
    return `${this.base}/sessions/${id}/artifacts/${name}`;
  }

  async getArtifact(id: string, name: string): Promise<ArtifactResponse> {
    const resp = await this.fetchFn(this.artifactUrl(id, name));
    await raiseForStatus(resp);
    return {
      bytes: await resp.arrayBuffer(),
      etag: resp.headers.get("etag"),
      mediaType: resp.headers.get("content-type"),
    };
  }

  async replaceMask(
    id: string,
    maskPng: Blob,
  ): Promise<{ id: string; state: SessionState; epoch: number }> {
    const resp = await this.fetchFn(`${this.base}/sessions/${id}/mask`, {
      method: "POST",
      body: maskPng,
      headers: { "content-type": "image/png" },
    });
    await raiseForStatus(resp);
    return resp.json();
  }

  async fuse(id: string, req: FuseRequest): Promise<FuseResponse> {
    const resp = await this.fetchFn(`${this.base}/sessions/${id}/fuse`, {
      method: "POST",
      body: JSON.stringify(req),
      headers: { "content-type": "application/json" },
    });
    await raiseForStatus(resp);
    return resp.json();
  }

  async deleteSession(id: string): Promise<void> {
    const resp = await this.fetchFn(`${this.base}/sessions/${id}`, {
      method: "DELETE",
    });
    await raiseForStatus(resp);
  }

  /** Poll until the manifest satisfies `done` (e.g. state === "fused"). */
  async waitFor(
    id: string,
    done: (m: SessionManifest) => boolean,
    opts: { timeoutMs?: number; intervalMs?: number } = {},
  ): Promise<SessionManifest> {
    const timeoutMs = opts.timeoutMs ?? 120_000;
    const intervalMs = opts.intervalMs ?? 400;
    const t0 = Date.now();
    for (;;) {
      const m = await this.getSession(id);
      if (done(m)) return m;
      if (Date.now() - t0 > timeoutMs) {
        throw new Error(`timed out waiting on session ${id} (state ${m.state})`);
      }
      await new Promise((r) => setTimeout(r, intervalMs));
    }
  }
}
