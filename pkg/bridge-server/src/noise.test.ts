import assert from "node:assert/strict";
import { test } from "node:test";

import { noiseField, noiseValue, parseSeed, splitmix64 } from "./noise.js";

// vectors pinned against the reference pipeline implementation
const SPLITMIX_VECTORS: Array<[bigint, bigint]> = [
  [0n, 16294208416658607535n],
  [1n, 10451216379200822465n],
  [42n, 13679457532755275413n],
  [18446744073709551615n, 16490336266968443936n],
  [1234567890123456789n, 11026200465730903474n],
];

// noise values as exact float64 hex strings
const NOISE_VECTORS: Array<[bigint, number, number, string]> = [
  [0n, 0, 0, "0x1.1c13ade1c7e5cp-3"],
  [7n, 3, 5, "0x1.ec8fbc87cc1d8p-1"],
  [99n, 511, 767, "0x1.a759eafcb32d0p-1"],
  [9223372036854788153n, 17, 4, "0x1.78726099b0ac9p-1"],
  [18446744073709551615n, 1023, 1023, "0x1.99d8d63ef457fp-1"],
];

function parseHexFloat(text: string): number {
  const match = /^0x1\.([0-9a-f]+)p(-?\d+)$/.exec(text);
  assert.ok(match, `unparseable hex float ${text}`);
  const mantissaBits = match[1];
  const exponent = Number.parseInt(match[2], 10);
  let mantissa = 1;
  for (let i = 0; i < mantissaBits.length; i++) {
    mantissa += Number.parseInt(mantissaBits[i], 16) * Math.pow(16, -(i + 1));
  }
  return mantissa * Math.pow(2, exponent);
}

test("splitmix64 matches the pinned reference vectors", () => {
  for (const [input, expected] of SPLITMIX_VECTORS) {
    assert.equal(splitmix64(input), expected);
  }
});

test("noise values match the pinned reference vectors exactly", () => {
  for (const [seed, x, y, hex] of NOISE_VECTORS) {
    assert.equal(noiseValue(seed, x, y), parseHexFloat(hex));
  }
});

test("noiseField agrees with noiseValue on every pixel", () => {
  const field = noiseField(77n, 5, 4);
  for (let y = 0; y < 4; y++) {
    for (let x = 0; x < 5; x++) {
      assert.equal(field[y * 5 + x], noiseValue(77n, x, y));
    }
  }
});

test("noise stays inside [0, 1)", () => {
  const field = noiseField(123456789n, 32, 32);
  for (const value of field) {
    assert.ok(value >= 0 && value < 1);
  }
});

test("parseSeed accepts strings and integers, rejects junk", () => {
  assert.equal(parseSeed("18446744073709551615"), 18446744073709551615n);
  assert.equal(parseSeed(42), 42n);
  assert.equal(parseSeed(undefined), 0n);
  assert.throws(() => parseSeed("12x3"));
  assert.throws(() => parseSeed(-5));
  assert.throws(() => parseSeed(1.5));
});
