/** UI session state and the fuse request queue.
 *
 * Invariants enforced here:
 *  - `toggles` always mirrors the last fuse request the server accepted;
 *    optimistic checkbox changes live only in the queue until then.
 *  - at most one fuse request is in flight; toggles arriving meanwhile
 *    coalesce into a single trailing request carrying the latest vector.
 *  - `stale` marks artifacts as outdated from the moment a recompute or
 *    re-fuse is requested until fresh artifacts land.
 */

import type { SessionManifest } from "./api.js";
import type { BrushSettings } from "./mask.js";

export type OverlayKind = "none" | "confidence" | "weight";

export interface Notice {
  id: number;
  kind: "error" | "info";
  text: string;
}

export interface UiSessionState {
  sessionId: string | null;
  manifest: SessionManifest | null;
  toggles: boolean[];
  overlay: OverlayKind;
  brush: BrushSettings;
  stale: boolean;
  notices: Notice[];
}

export function initialState(): UiSessionState {
  return {
    sessionId: null,
    manifest: null,
    toggles: [],
    overlay: "none",
    brush: { radius: 16, erase: false },
    stale: false,
    notices: [],
  };
}

export class SessionStore {
  state: UiSessionState = initialState();
  private noticeSeq = 0;
  private listeners: Array<(s: UiSessionState) => void> = [];

  subscribe(fn: (s: UiSessionState) => void): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((f) => f !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  setSession(id: string): void {
    this.state = { ...initialState(), sessionId: id, stale: true };
    this.emit();
  }

  applyManifest(m: SessionManifest): void {
    const first = this.state.manifest === null;
    this.state.manifest = m;
    this.state.stale = m.state !== "fused";
    if (first || this.state.toggles.length !== m.n_proposals) {
      this.state.toggles = new Array(m.n_proposals).fill(true);
    }
    this.emit();
  }

  /** Called only after POST /fuse succeeded: the mirror invariant. */
  applyFuseSuccess(toggles: boolean[]): void {
    this.state.toggles = [...toggles];
    this.state.stale = false;
    this.emit();
  }

  markStale(): void {
    this.state.stale = true;
    this.emit();
  }

  setOverlay(kind: OverlayKind): void {
    this.state.overlay = kind;
    this.emit();
  }

  setBrush(brush: BrushSettings): void {
    this.state.brush = { ...brush };
    this.emit();
  }

  notify(kind: Notice["kind"], text: string): number {
    const id = ++this.noticeSeq;
    this.state.notices = [...this.state.notices, { id, kind, text }];
    this.emit();
    return id;
  }

  dismiss(id: number): void {
    this.state.notices = this.state.notices.filter((n) => n.id !== id);
    this.emit();
  }
}

/** Serializes fuse requests: one in flight, trailing ones coalesce. */
export class FuseQueue {
  private inFlight = false;
  private queued: boolean[] | null = null;
  /** vectors actually submitted, in order (exposed for tests/debugging) */
  readonly submitted: boolean[][] = [];

  constructor(
    private submit: (toggles: boolean[]) => Promise<void>,
    private onError: (err: unknown) => void = () => {},
  ) {}

  get busy(): boolean {
    return this.inFlight;
  }

  get pending(): boolean[] | null {
    return this.queued ? [...this.queued] : null;
  }

  /** Request a fuse with this toggle vector; supersedes any queued vector. */
  request(toggles: boolean[]): void {
    if (this.inFlight) {
      this.queued = [...toggles]; // coalesce: only the latest vector survives
      return;
    }
    void this.run([...toggles]);
  }

  /** Resolves once the queue drains (every requested vector landed or failed). */
  async idle(): Promise<void> {
    while (this.inFlight) {
      await new Promise((r) => setTimeout(r, 10));
    }
  }

  private async run(toggles: boolean[]): Promise<void> {
    this.inFlight = true;
    try {
      this.submitted.push([...toggles]);
      await this.submit(toggles);
    } catch (err) {
      this.onError(err);
    } finally {
      this.inFlight = false;
      const next = this.queued;
      this.queued = null;
      if (next) void this.run(next);
    }
  }
}
