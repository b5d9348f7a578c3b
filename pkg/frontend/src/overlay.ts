/** Scalar-map overlays (confidence / weight) as a fixed two-color alpha ramp.
 *
 * Blue-to-orange was picked over the usual red/green so the legend stays
 * readable under the common color-vision deficiencies; alpha carries the
 * magnitude so the underlying proposal remains visible.
 */

export const RAMP_LOW: readonly [number, number, number] = [43, 131, 186];
export const RAMP_HIGH: readonly [number, number, number] = [230, 97, 1];
export const MAX_ALPHA = 0.72;

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number; // 0..1
}

/** Color for a scalar value in [0, 1]; out-of-range values are clamped. */
export function rampColor(value: number): Rgba {
  const v = Math.min(1, Math.max(0, value));
  return {
    r: Math.round(RAMP_LOW[0] + (RAMP_HIGH[0] - RAMP_LOW[0]) * v),
    g: Math.round(RAMP_LOW[1] + (RAMP_HIGH[1] - RAMP_LOW[1]) * v),
    b: Math.round(RAMP_LOW[2] + (RAMP_HIGH[2] - RAMP_LOW[2]) * v),
    a: MAX_ALPHA * v,
  };
}

export interface LegendStop {
  value: number;
  cssColor: string;
  label: string;
}

export function legendStops(n = 5): LegendStop[] {
  const stops: LegendStop[] = [];
  for (let i = 0; i < n; i++) {
    const v = i / (n - 1);
    const c = rampColor(v);
    stops.push({
      value: v,
      cssColor: `rgba(${c.r}, ${c.g}, ${c.b}, ${c.a.toFixed(3)})`,
      label: v.toFixed(2),
    });
  }
  return stops;
}

/**
 * Alpha-composite the scalar map over base RGBA pixels (both row-major,
 * `values` one scalar in [0,1] per pixel from the grayscale artifact).
 * Returns a new buffer; the base is untouched.
 */
export function blendOverlay(
  base: Uint8ClampedArray,
  values: Float32Array | Uint8ClampedArray,
  width: number,
  height: number,
): Uint8ClampedArray {
  const n = width * height;
  if (base.length !== n * 4) {
    throw new Error(`base length ${base.length} != ${n * 4}`);
  }
  if (values.length !== n) {
    throw new Error(`values length ${values.length} != ${n}`);
  }
  const scale = values instanceof Uint8ClampedArray ? 1 / 255 : 1;
  const out = new Uint8ClampedArray(base);
  for (let i = 0; i < n; i++) {
    const c = rampColor(values[i] * scale);
    if (c.a === 0) continue;
    const j = i * 4;
    out[j] = Math.round(c.r * c.a + base[j] * (1 - c.a));
    out[j + 1] = Math.round(c.g * c.a + base[j + 1] * (1 - c.a));
    out[j + 2] = Math.round(c.b * c.a + base[j + 2] * (1 - c.a));
  }
  return out;
}
