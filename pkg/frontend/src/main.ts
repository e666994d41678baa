/** Browser entry point: real fetch, canvas-based mask decoding and overlay. */

import { ApiClient } from './api.js';
import { createApp } from './app.js';
import { blendMaskOverlay, maskFromRgba } from './mask.js';
import type { RunView } from './state.js';
import type { MaskBitmap } from './types.js';

// Served under /ui; the API lives at the origin root.
const api = new ApiClient('');

async function fetchImageData(url: string): Promise<ImageData> {
  const response = await fetch(url);
  if (!response.ok) throw new Error(`failed to fetch ${url}: ${response.status}`);
  const bitmap = await createImageBitmap(await response.blob());
  const canvas = document.createElement('canvas');
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext('2d');
  if (!ctx) throw new Error('2d canvas unavailable');
  ctx.drawImage(bitmap, 0, 0);
  return ctx.getImageData(0, 0, bitmap.width, bitmap.height);
}

async function loadMask(url: string): Promise<MaskBitmap> {
  const image = await fetchImageData(url);
  return maskFromRgba(image.data, image.width, image.height);
}

const inputPixels = new Map<string, ImageData>();

function paintOverlay(canvas: HTMLCanvasElement, view: RunView): boolean {
  const mask = view.maskBitmap;
  const inputUrl = api.artifactUrl(view.run, 'input');
  if (!mask || !inputUrl) return false;
  const cached = inputPixels.get(view.run.id);
  if (!cached) {
    // fetch asynchronously; the next render paints from the cache
    void fetchImageData(inputUrl).then((data) => {
      inputPixels.set(view.run.id, data);
      canvas.dispatchEvent(new Event('maskedit:input-ready'));
    });
    return false;
  }
  if (cached.width !== mask.width || cached.height !== mask.height) return false;
  const ctx = canvas.getContext('2d');
  if (!ctx) return false;
  canvas.width = mask.width;
  canvas.height = mask.height;
  const blended = blendMaskOverlay(new Uint8ClampedArray(cached.data), mask);
  ctx.putImageData(new ImageData(blended, mask.width, mask.height), 0, 0);
  return true;
}

const root = document.getElementById('app');
if (!root) throw new Error('missing #app container');
createApp(root, { api, loadMask, paintOverlay });
