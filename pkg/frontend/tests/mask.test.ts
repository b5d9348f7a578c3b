import { describe, expect, it } from "vitest";

import { MaskModel } from "../src/mask.js";

const BRUSH = { radius: 4, erase: false };

function paint(m: MaskModel, pts: Array<[number, number]>, brush = BRUSH) {
  m.beginStroke(brush, { x: pts[0][0], y: pts[0][1] });
  for (const [x, y] of pts.slice(1)) m.extendStroke({ x, y });
  m.endStroke();
}

describe("MaskModel", () => {
  it("starts empty and rejects nothing yet", () => {
    const m = new MaskModel(32, 24);
    expect(m.isEmpty()).toBe(true);
    expect(m.holePixelCount()).toBe(0);
  });

  it("no strokes means empty (upload must be rejected client-side)", () => {
    const m = new MaskModel(16, 16);
    expect(m.isEmpty()).toBe(true);
    // an erase-only stroke also leaves the mask empty
    paint(m, [[8, 8]], { radius: 5, erase: true });
    expect(m.isEmpty()).toBe(true);
  });

  it("one full-canvas stroke marks every pixel", () => {
    const m = new MaskModel(20, 12);
    paint(m, [[10, 6]], { radius: 30, erase: false });
    expect(m.holePixelCount()).toBe(20 * 12);
    const raster = m.rasterize();
    expect(raster.every((v) => v === 255)).toBe(true);
  });

  it("stroke then undo restores the pre-stroke mask exactly", () => {
    const m = new MaskModel(48, 40);
    paint(m, [[5, 5], [20, 12]]);
    const before = m.rasterize();
    paint(m, [[30, 30], [44, 36]]);
    expect(m.rasterize()).not.toEqual(before);
    expect(m.undo()).toBe(true);
    expect(m.rasterize()).toEqual(before);
  });

  it("undo of an erase stroke restores the erased pixels", () => {
    const m = new MaskModel(32, 32);
    paint(m, [[16, 16]], { radius: 10, erase: false });
    const before = m.rasterize();
    paint(m, [[16, 16]], { radius: 6, erase: true });
    expect(m.holePixelCount()).toBeLessThan(before.filter((v) => v).length);
    m.undo();
    expect(m.rasterize()).toEqual(before);
  });

  it("redo replays the undone stroke; a new stroke clears the redo branch", () => {
    const m = new MaskModel(32, 32);
    paint(m, [[8, 8]]);
    const withStroke = m.rasterize();
    m.undo();
    expect(m.redo()).toBe(true);
    expect(m.rasterize()).toEqual(withStroke);
    m.undo();
    paint(m, [[24, 24]]);
    expect(m.redo()).toBe(false);
  });

  it("supports at least 20 levels of undo", () => {
    const m = new MaskModel(64, 64);
    const snapshots: Uint8Array[] = [m.rasterize()];
    for (let i = 0; i < 25; i++) {
      paint(m, [[2 + i * 2, 3 + i * 2]]);
      snapshots.push(m.rasterize());
    }
    expect(m.undoDepth).toBeGreaterThanOrEqual(20);
    for (let i = 25; i >= 1; i--) {
      expect(m.undo()).toBe(true);
      expect(m.rasterize()).toEqual(snapshots[i - 1]);
    }
    expect(m.isEmpty()).toBe(true);
  });

  it("dense segment walking leaves no gaps along a stroke", () => {
    const m = new MaskModel(100, 10);
    paint(m, [[5, 5], [95, 5]], { radius: 3, erase: false });
    const raster = m.rasterize();
    for (let x = 5; x <= 95; x++) expect(raster[5 * 100 + x]).toBe(255);
  });

  it("clamps stamps at the borders without wrapping", () => {
    const m = new MaskModel(16, 16);
    paint(m, [[0, 0]], { radius: 3, erase: false });
    const raster = m.rasterize();
    expect(raster[0]).toBe(255);
    // nothing on the far edge (would indicate index wrap-around)
    for (let y = 0; y < 16; y++) expect(raster[y * 16 + 15]).toBe(0);
  });

  it("rejects non-positive dimensions", () => {
    expect(() => new MaskModel(0, 5)).toThrow();
  });
});
