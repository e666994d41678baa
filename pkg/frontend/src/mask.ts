/** Pure pixel operations: mask decoding, red overlay blending, subset checks,
 * slider clamping.  No DOM dependencies so everything is unit-testable. */

import type { MaskBitmap } from './types.js';

/** Threshold RGBA pixels (as from a grayscale mask PNG) into a 0/1 bitmap. */
export function maskFromRgba(rgba: Uint8ClampedArray, width: number, height: number): MaskBitmap {
  if (rgba.length !== width * height * 4) {
    throw new Error(`expected ${width * height * 4} RGBA bytes, got ${rgba.length}`);
  }
  const data = new Uint8Array(width * height);
  for (let i = 0; i < data.length; i++) {
    data[i] = rgba[4 * i] >= 128 ? 1 : 0;
  }
  return { width, height, data };
}

/** Alpha-blend the mask region in colour over base RGBA pixels (new array). */
export function blendMaskOverlay(
  base: Uint8ClampedArray,
  mask: MaskBitmap,
  color: [number, number, number] = [255, 0, 0],
  alpha = 0.5,
): Uint8ClampedArray {
  if (base.length !== mask.width * mask.height * 4) {
    throw new Error('overlay base size does not match the mask');
  }
  const out = new Uint8ClampedArray(base);
  for (let i = 0; i < mask.data.length; i++) {
    if (!mask.data[i]) continue;
    for (let c = 0; c < 3; c++) {
      out[4 * i + c] = Math.round((1 - alpha) * base[4 * i + c] + alpha * color[c]);
    }
    out[4 * i + 3] = 255;
  }
  return out;
}

export function maskArea(mask: MaskBitmap): number {
  let area = 0;
  for (const v of mask.data) area += v;
  return area;
}

/** True when every set pixel of `inner` is also set in `outer`. */
export function isSubset(inner: MaskBitmap, outer: MaskBitmap): boolean {
  if (inner.width !== outer.width || inner.height !== outer.height) return false;
  for (let i = 0; i < inner.data.length; i++) {
    if (inner.data[i] && !outer.data[i]) return false;
  }
  return true;
}

/** Slider bounds: theta in (0, 1) exclusive; encoding ratio in (0, 1]. */
export function clampTheta(value: number): number | null {
  if (!Number.isFinite(value) || value <= 0 || value >= 1) return null;
  return value;
}

export function clampRatio(value: number): number | null {
  if (!Number.isFinite(value) || value <= 0 || value > 1) return null;
  return value;
}
