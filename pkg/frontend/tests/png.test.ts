import { describe, expect, it } from "vitest";

import { decodePng, encodeGrayPng, encodeRgbPng } from "./png.js";

describe("test png codec", () => {
  it("gray round trip", () => {
    const w = 23;
    const h = 11;
    const px = new Uint8Array(w * h).map((_, i) => (i * 7) % 256);
    const dec = decodePng(encodeGrayPng(px, w, h));
    expect(dec.width).toBe(w);
    expect(dec.height).toBe(h);
    expect(dec.channels).toBe(1);
    expect(dec.data).toEqual(px);
  });

  it("rgb round trip", () => {
    const w = 9;
    const h = 14;
    const px = new Uint8Array(w * h * 3).map((_, i) => (i * 13) % 256);
    const dec = decodePng(encodeRgbPng(px, w, h));
    expect(dec.channels).toBe(3);
    expect(dec.data).toEqual(px);
  });

  it("rejects garbage", () => {
    expect(() => decodePng(Buffer.from("definitely not a png"))).toThrow();
  });

  it("rejects wrong pixel buffer size", () => {
    expect(() => encodeGrayPng(new Uint8Array(5), 2, 2)).toThrow();
  });
});
