/** Hole-mask painting model, kept free of DOM types so it unit-tests in node.
 *
 * The mask lives at full image resolution as strokes (disc-stamped
 * polylines); rasterization replays the stroke list from scratch, so undo is
 * exact: popping a stroke restores the previous mask bit for bit.
 */

export interface BrushSettings {
  radius: number;
  erase: boolean;
}

export interface StrokePoint {
  x: number;
  y: number;
}

export interface Stroke {
  points: StrokePoint[];
  radius: number;
  erase: boolean;
}

export const MIN_UNDO_DEPTH = 20; // the stack is unbounded; this is the floor

export class MaskModel {
  private strokes: Stroke[] = [];
  private redoStrokes: Stroke[] = [];
  private active: Stroke | null = null;

  constructor(
    public readonly width: number,
    public readonly height: number,
  ) {
    if (width <= 0 || height <= 0) {
      throw new Error(`mask dims must be positive, got ${width}x${height}`);
    }
  }

  beginStroke(brush: BrushSettings, p: StrokePoint): void {
    this.active = {
      points: [p],
      radius: Math.max(1, brush.radius),
      erase: brush.erase,
    };
  }

  extendStroke(p: StrokePoint): void {
    if (!this.active) return;
    this.active.points.push(p);
  }

  endStroke(): void {
    if (!this.active) return;
    this.strokes.push(this.active);
    this.active = null;
    this.redoStrokes = []; // a new stroke invalidates the redo branch
  }

  get strokeCount(): number {
    return this.strokes.length;
  }

  get undoDepth(): number {
    return this.strokes.length; // unbounded, hence always >= MIN_UNDO_DEPTH cap
  }

  undo(): boolean {
    const s = this.strokes.pop();
    if (!s) return false;
    this.redoStrokes.push(s);
    return true;
  }

  redo(): boolean {
    const s = this.redoStrokes.pop();
    if (!s) return false;
    this.strokes.push(s);
    return true;
  }

  clear(): void {
    this.strokes = [];
    this.redoStrokes = [];
    this.active = null;
  }

  /** Full-resolution binary mask: 255 = hole, 0 = keep. */
  rasterize(): Uint8Array {
    const out = new Uint8Array(this.width * this.height);
    const all = this.active ? [...this.strokes, this.active] : this.strokes;
    for (const s of all) this.stampStroke(out, s);
    return out;
  }

  /** True when no pixel is marked as hole (uploads are rejected client-side). */
  isEmpty(): boolean {
    const m = this.rasterize();
    for (let i = 0; i < m.length; i++) if (m[i]) return false;
    return true;
  }

  holePixelCount(): number {
    const m = this.rasterize();
    let n = 0;
    for (let i = 0; i < m.length; i++) if (m[i]) n++;
    return n;
  }

  private stampStroke(out: Uint8Array, s: Stroke): void {
    const val = s.erase ? 0 : 255;
    const pts = s.points;
    for (let i = 0; i < pts.length; i++) {
      this.stampDisc(out, pts[i].x, pts[i].y, s.radius, val);
      if (i + 1 < pts.length) {
        // walk the segment densely enough that discs overlap
        const dx = pts[i + 1].x - pts[i].x;
        const dy = pts[i + 1].y - pts[i].y;
        const dist = Math.hypot(dx, dy);
        const steps = Math.ceil(dist / Math.max(1, s.radius / 2));
        for (let k = 1; k < steps; k++) {
          const t = k / steps;
          this.stampDisc(out, pts[i].x + dx * t, pts[i].y + dy * t, s.radius, val);
        }
      }
    }
  }

  private stampDisc(
    out: Uint8Array,
    cx: number,
    cy: number,
    r: number,
    val: number,
  ): void {
    const x0 = Math.max(0, Math.floor(cx - r));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + r));
    const y0 = Math.max(0, Math.floor(cy - r));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + r));
    const r2 = r * r;
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const ddx = x - cx;
        const ddy = y - cy;
        if (ddx * ddx + ddy * ddy <= r2) out[y * this.width + x] = val;
      }
    }
  }
}
