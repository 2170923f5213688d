/**
 * Minimal PNG codec: enough to exchange lossless 8-bit images on the wire
 * without native dependencies.
 *
 * Decodes non-interlaced 8-bit grayscale / RGB / RGBA images with any
 * scanline filter (None, Sub, Up, Average, Paeth). Encodes grayscale and
 * RGB with filter 0. CRCs are verified on read and emitted on write.
 */

import * as zlib from "node:zlib";

const SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

export interface DecodedPng {
  width: number;
  height: number;
  channels: 1 | 3 | 4;
  data: Uint8Array; // row-major, channels interleaved
}

export class PngError extends Error {}

function crc32(...parts: Buffer[]): number {
  let crc = 0;
  for (const part of parts) {
    crc = zlib.crc32(part, crc);
  }
  return crc >>> 0;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

export function decodePng(buffer: Buffer): DecodedPng {
  if (buffer.length < 8 || !buffer.subarray(0, 8).equals(SIGNATURE)) {
    throw new PngError("not a PNG: bad signature");
  }
  let offset = 8;
  let width = 0;
  let height = 0;
  let channels: 1 | 3 | 4 = 3;
  let sawHeader = false;
  let sawEnd = false;
  const idatParts: Buffer[] = [];

  while (offset + 8 <= buffer.length) {
    const length = buffer.readUInt32BE(offset);
    const type = buffer.toString("latin1", offset + 4, offset + 8);
    const dataStart = offset + 8;
    const dataEnd = dataStart + length;
    if (dataEnd + 4 > buffer.length) {
      throw new PngError(`truncated ${type} chunk`);
    }
    const data = buffer.subarray(dataStart, dataEnd);
    const declaredCrc = buffer.readUInt32BE(dataEnd);
    if (crc32(buffer.subarray(offset + 4, offset + 8), data) !== declaredCrc) {
      throw new PngError(`bad CRC in ${type} chunk`);
    }

    if (type === "IHDR") {
      width = data.readUInt32BE(0);
      height = data.readUInt32BE(4);
      const bitDepth = data.readUInt8(8);
      const colorType = data.readUInt8(9);
      const interlace = data.readUInt8(12);
      if (bitDepth !== 8) throw new PngError(`unsupported bit depth ${bitDepth}`);
      if (interlace !== 0) throw new PngError("interlaced PNGs are not supported");
      if (colorType === 0) channels = 1;
      else if (colorType === 2) channels = 3;
      else if (colorType === 6) channels = 4;
      else throw new PngError(`unsupported color type ${colorType}`);
      if (width < 1 || height < 1) throw new PngError("empty image");
      sawHeader = true;
    } else if (type === "IDAT") {
      idatParts.push(data);
    } else if (type === "IEND") {
      sawEnd = true;
      break;
    }
    offset = dataEnd + 4;
  }

  if (!sawHeader) throw new PngError("missing IHDR chunk");
  if (!sawEnd) throw new PngError("missing IEND chunk");
  if (idatParts.length === 0) throw new PngError("missing IDAT data");

  let raw: Buffer;
  try {
    raw = zlib.inflateSync(Buffer.concat(idatParts));
  } catch (error) {
    throw new PngError(`corrupt IDAT stream: ${(error as Error).message}`);
  }

  const stride = width * channels;
  if (raw.length !== (stride + 1) * height) {
    throw new PngError(`decompressed size ${raw.length} does not match ${width}x${height}`);
  }

  const out = new Uint8Array(stride * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const rowIn = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const rowOut = out.subarray(y * stride, (y + 1) * stride);
    const prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null;
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? rowOut[x - channels] : 0;
      const up = prev ? prev[x] : 0;
      const upLeft = prev && x >= channels ? prev[x - channels] : 0;
      let value = rowIn[x];
      switch (filter) {
        case 0:
          break;
        case 1:
          value = (value + left) & 0xff;
          break;
        case 2:
          value = (value + up) & 0xff;
          break;
        case 3:
          value = (value + ((left + up) >> 1)) & 0xff;
          break;
        case 4:
          value = (value + paeth(left, up, upLeft)) & 0xff;
          break;
        default:
          throw new PngError(`unknown scanline filter ${filter}`);
      }
      rowOut[x] = value;
    }
  }
  return { width, height, channels, data: out };
}

function chunk(type: string, data: Buffer): Buffer {
  const header = Buffer.alloc(8);
  header.writeUInt32BE(data.length, 0);
  header.write(type, 4, "latin1");
  const crc = Buffer.alloc(4);
  crc.writeUInt32BE(crc32(header.subarray(4, 8), data), 0);
  return Buffer.concat([header, data, crc]);
}

function encode(width: number, height: number, channels: 1 | 3, pixels: Uint8Array): Buffer {
  const stride = width * channels;
  if (pixels.length !== stride * height) {
    throw new PngError(`pixel buffer is ${pixels.length} bytes, expected ${stride * height}`);
  }
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(width, 0);
  ihdr.writeUInt32BE(height, 4);
  ihdr.writeUInt8(8, 8); // bit depth
  ihdr.writeUInt8(channels === 1 ? 0 : 2, 9); // color type
  // compression, filter, interlace stay 0
  const raw = Buffer.alloc((stride + 1) * height);
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = 0; // filter: None
    raw.set(pixels.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1);
  }
  return Buffer.concat([
    SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("IDAT", zlib.deflateSync(raw)),
    chunk("IEND", Buffer.alloc(0)),
  ]);
}

export function encodePngRgb(width: number, height: number, pixels: Uint8Array): Buffer {
  return encode(width, height, 3, pixels);
}

export function encodePngGray(width: number, height: number, pixels: Uint8Array): Buffer {
  return encode(width, height, 1, pixels);
}

/** Expand to interleaved RGB, dropping alpha / replicating gray. */
export function toRgb(png: DecodedPng): Uint8Array {
  const size = png.width * png.height;
  if (png.channels === 3) return png.data;
  const out = new Uint8Array(size * 3);
  if (png.channels === 1) {
    for (let i = 0; i < size; i++) {
      out[i * 3] = out[i * 3 + 1] = out[i * 3 + 2] = png.data[i];
    }
  } else {
    for (let i = 0; i < size; i++) {
      out[i * 3] = png.data[i * 4];
      out[i * 3 + 1] = png.data[i * 4 + 1];
      out[i * 3 + 2] = png.data[i * 4 + 2];
    }
  }
  return out;
}

/** Collapse to single-channel luma (fixed-point ITU-R 601-2 weights). */
export function toGray(png: DecodedPng): Uint8Array {
  const size = png.width * png.height;
  if (png.channels === 1) return png.data;
  const out = new Uint8Array(size);
  const step = png.channels;
  for (let i = 0; i < size; i++) {
    const r = png.data[i * step];
    const g = png.data[i * step + 1];
    const b = png.data[i * step + 2];
    out[i] = (r * 19595 + g * 38470 + b * 7471 + 0x8000) >> 16;
  }
  return out;
}
