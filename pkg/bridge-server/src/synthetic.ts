/**
 * Synthetic model profile: deterministic stand-ins for the detector,
 * inpainting generator, and embedding network.
 *
 * The inpainting semantics follow the shared mixing contract: outside the
 * mask the input bytes pass through untouched; inside, each pixel becomes
 * (1 - s) * input + s * noise(seed, x, y) with the noise field documented
 * in noise.ts. Arithmetic deliberately walks float32 -> float64 ->
 * float32 the same way the reference pipeline does, so the returned bytes
 * agree with it exactly.
 */

import { noiseField, parseSeed } from "./noise.js";

export interface RgbImage {
  width: number;
  height: number;
  data: Uint8Array; // RGB interleaved
}

export interface SyntheticDetection {
  classLabel: string;
  confidence: number;
  box: [number, number, number, number];
  mask: Uint8Array; // single channel, 0 or 255
}

export const DETECT_CONFIDENCE = 0.9;
const DETECT_BYTE_SUM = 382; // mean channel byte > 127.5, exact in integers

const fround = Math.fround;

export interface InpaintParams {
  denoiseStrength: number;
  seed: unknown;
}

export function inpaint(image: RgbImage, mask: Uint8Array, params: InpaintParams): Uint8Array {
  const { width, height, data } = image;
  if (mask.length !== width * height) {
    throw new Error(`mask has ${mask.length} pixels, image has ${width * height}`);
  }
  const strength = params.denoiseStrength;
  if (!(strength >= 0 && strength <= 1)) {
    throw new Error(`denoise_strength ${strength} outside [0, 1]`);
  }
  if (strength === 0) {
    return data;
  }
  const seed = parseSeed(params.seed);
  const noise = noiseField(seed, width, height);
  const keep = 1.0 - strength;
  const out = Uint8Array.from(data);
  for (let p = 0; p < width * height; p++) {
    if (mask[p] < 128) continue;
    const g = noise[p];
    for (let c = 0; c < 3; c++) {
      const src32 = fround(data[p * 3 + c] / 255); // float32 unit intensity
      let mixed = keep * src32 + strength * g; // float64 blend
      if (mixed < 0) mixed = 0;
      else if (mixed > 1) mixed = 1;
      out[p * 3 + c] = Math.min(255, Math.floor(fround(mixed) * 255 + 0.5));
    }
  }
  return out;
}

export function detect(image: RgbImage, confidenceThreshold: number): SyntheticDetection[] {
  const { width, height, data } = image;
  if (DETECT_CONFIDENCE < confidenceThreshold) {
    return [];
  }
  const mask = new Uint8Array(width * height);
  let minX = width;
  let minY = height;
  let maxX = -1;
  let maxY = -1;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const p = y * width + x;
      const sum = data[p * 3] + data[p * 3 + 1] + data[p * 3 + 2];
      if (sum > DETECT_BYTE_SUM) {
        mask[p] = 255;
        if (x < minX) minX = x;
        if (y < minY) minY = y;
        if (x > maxX) maxX = x;
        if (y > maxY) maxY = y;
      }
    }
  }
  if (maxX < 0) {
    return [];
  }
  return [
    {
      classLabel: "person",
      confidence: DETECT_CONFIDENCE,
      box: [minX, minY, maxX + 1, maxY + 1],
      mask,
    },
  ];
}

const TOY_FEATURE_SEED = 0x7f0a11e5n;
const TOY_LOGIT_SEED = 0x0ddba11n;

function coarseStats(image: RgbImage): Float64Array {
  const { width, height, data } = image;
  const count = width * height;
  const stats = new Float64Array(8);
  const sums = [0, 0, 0];
  for (let p = 0; p < count; p++) {
    for (let c = 0; c < 3; c++) {
      sums[c] += fround(data[p * 3 + c] / 255);
    }
  }
  const means = sums.map((s) => s / count);
  const sqDev = [0, 0, 0];
  for (let p = 0; p < count; p++) {
    for (let c = 0; c < 3; c++) {
      const dev = fround(data[p * 3 + c] / 255) - means[c];
      sqDev[c] += dev * dev;
    }
  }
  for (let c = 0; c < 3; c++) {
    stats[c] = means[c];
    stats[3 + c] = Math.sqrt(sqDev[c] / count);
  }
  const luminance = new Float64Array(count);
  for (let p = 0; p < count; p++) {
    luminance[p] =
      (fround(data[p * 3] / 255) + fround(data[p * 3 + 1] / 255) + fround(data[p * 3 + 2] / 255)) / 3;
  }
  let gx = 0;
  let gy = 0;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x + 1 < width; x++) {
      gx += Math.abs(luminance[y * width + x + 1] - luminance[y * width + x]);
    }
  }
  for (let y = 0; y + 1 < height; y++) {
    for (let x = 0; x < width; x++) {
      gy += Math.abs(luminance[(y + 1) * width + x] - luminance[y * width + x]);
    }
  }
  stats[6] = width > 1 ? gx / ((width - 1) * height) : 0;
  stats[7] = height > 1 ? gy / ((height - 1) * width) : 0;
  return stats;
}

function mixingMatrix(seed: bigint, rows: number, cols: number): Float64Array {
  const field = noiseField(seed, cols, rows);
  const out = new Float64Array(rows * cols);
  for (let i = 0; i < out.length; i++) {
    out[i] = 2 * field[i] - 1;
  }
  return out;
}

export function extract(
  image: RgbImage,
  classes: number,
  dims: number,
): { probabilities: number[]; features: number[] } {
  if (classes < 1 || dims < 1) {
    throw new Error("classes and dims must be >= 1");
  }
  const stats = coarseStats(image);
  const logitW = mixingMatrix(TOY_LOGIT_SEED, classes, stats.length);
  const logits = new Float64Array(classes);
  for (let k = 0; k < classes; k++) {
    let acc = 0;
    for (let i = 0; i < stats.length; i++) {
      acc += logitW[k * stats.length + i] * stats[i];
    }
    logits[k] = acc;
  }
  const maxLogit = Math.max(...logits);
  let total = 0;
  const probabilities = new Array<number>(classes);
  for (let k = 0; k < classes; k++) {
    probabilities[k] = Math.exp(logits[k] - maxLogit);
    total += probabilities[k];
  }
  for (let k = 0; k < classes; k++) {
    probabilities[k] /= total;
  }
  const featureW = mixingMatrix(TOY_FEATURE_SEED, dims, stats.length);
  const features = new Array<number>(dims);
  for (let j = 0; j < dims; j++) {
    let acc = 0;
    for (let i = 0; i < stats.length; i++) {
      acc += featureW[j * stats.length + i] * stats[i];
    }
    features[j] = acc;
  }
  return { probabilities, features };
}
