/** Minimal PNG encode/decode for tests (8-bit gray and RGB, node zlib).
 *
 * The browser client encodes masks with canvas.toBlob; tests run in node, so
 * this stands in for canvas. Decode handles all five scanline filters, which
 * is enough to read every artifact the service emits.
 */

import { deflateSync, inflateSync } from "node:zlib";

const SIGNATURE = Buffer.from([137, 80, 78, 71, 13, 10, 26, 10]);

const CRC_TABLE = (() => {
  const t = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    t[n] = c >>> 0;
  }
  return t;
})();

function crc32(buf: Buffer): number {
  let c = 0xffffffff;
  for (const byte of buf) c = CRC_TABLE[(c ^ byte) & 0xff] ^ (c >>> 8);
  return (c ^ 0xffffffff) >>> 0;
}

function chunk(type: string, data: Buffer): Buffer {
  const head = Buffer.concat([Buffer.from(type, "ascii"), data]);
  const out = Buffer.alloc(8 + data.length + 4);
  out.writeUInt32BE(data.length, 0);
  head.copy(out, 4);
  out.writeUInt32BE(crc32(head), 8 + data.length);
  return out;
}

function encode(pixels: Uint8Array, width: number, height: number,
                channels: 1 | 3): Buffer {
  if (pixels.length !== width * height * channels) {
    throw new Error(`pixel buffer length ${pixels.length} != ${width}x${height}x${channels}`);
  }
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(width, 0);
  ihdr.writeUInt32BE(height, 4);
  ihdr[8] = 8;                       // bit depth
  ihdr[9] = channels === 1 ? 0 : 2;  // gray | truecolor
  const stride = width * channels;
  const raw = Buffer.alloc((stride + 1) * height); // filter byte 0 per row
  for (let y = 0; y < height; y++) {
    Buffer.from(pixels.buffer, pixels.byteOffset + y * stride, stride)
      .copy(raw, y * (stride + 1) + 1);
  }
  return Buffer.concat([
    SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("IDAT", deflateSync(raw)),
    chunk("IEND", Buffer.alloc(0)),
  ]);
}

export function encodeGrayPng(pixels: Uint8Array, width: number,
                              height: number): Buffer {
  return encode(pixels, width, height, 1);
}

export function encodeRgbPng(pixels: Uint8Array, width: number,
                             height: number): Buffer {
  return encode(pixels, width, height, 3);
}

export interface DecodedPng {
  width: number;
  height: number;
  channels: number;
  data: Uint8Array; // row-major, interleaved
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

export function decodePng(buf: Buffer | ArrayBuffer): DecodedPng {
  const b = Buffer.isBuffer(buf) ? buf : Buffer.from(buf);
  if (!b.subarray(0, 8).equals(SIGNATURE)) throw new Error("not a PNG");
  let width = 0;
  let height = 0;
  let channels = 0;
  const idat: Buffer[] = [];
  let off = 8;
  while (off < b.length) {
    const len = b.readUInt32BE(off);
    const type = b.toString("ascii", off + 4, off + 8);
    const data = b.subarray(off + 8, off + 8 + len);
    if (type === "IHDR") {
      width = data.readUInt32BE(0);
      height = data.readUInt32BE(4);
      if (data[8] !== 8) throw new Error(`unsupported bit depth ${data[8]}`);
      const color = data[9];
      channels = { 0: 1, 2: 3, 4: 2, 6: 4 }[color] ?? 0;
      if (!channels) throw new Error(`unsupported color type ${color}`);
      if (data[12] !== 0) throw new Error("interlaced PNG unsupported");
    } else if (type === "IDAT") {
      idat.push(data);
    } else if (type === "IEND") {
      break;
    }
    off += 12 + len;
  }
  const raw = inflateSync(Buffer.concat(idat));
  const stride = width * channels;
  const out = new Uint8Array(stride * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const o = y * stride;
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? out[o + x - channels] : 0;
      const up = y > 0 ? out[o - stride + x] : 0;
      const ul = y > 0 && x >= channels ? out[o - stride + x - channels] : 0;
      let v = row[x];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) >> 1; break;
        case 4: v += paeth(left, up, ul); break;
        default: throw new Error(`bad filter ${filter}`);
      }
      out[o + x] = v & 0xff;
    }
  }
  return { width, height, channels, data: out };
}
