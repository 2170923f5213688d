/**
 * Deterministic 64-bit mixing shared with the pipeline's mock backend.
 *
 * The recipe is part of the wire contract and must agree bit for bit with
 * every other implementation:
 *
 *   splitmix64(z):
 *     z = (z + 0x9E3779B97F4A7C15) mod 2^64
 *     z = ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
 *     z = ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
 *     return z XOR (z >> 31)
 *
 *   noise(seed, x, y) = unit(splitmix64(splitmix64(splitmix64(seed) ^ x) ^ y))
 *   unit(v)           = (v >> 11) / 2^53    -> float in [0, 1)
 */

const MASK64 = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;
const INV_2_53 = Math.pow(2, -53);

export function splitmix64(value: bigint): bigint {
  let z = (value + GAMMA) & MASK64;
  z = ((z ^ (z >> 30n)) * MIX1) & MASK64;
  z = ((z ^ (z >> 27n)) * MIX2) & MASK64;
  return z ^ (z >> 31n);
}

export function unitInterval(value: bigint): number {
  return Number(value >> 11n) * INV_2_53;
}

export function noiseValue(seed: bigint, x: number, y: number): number {
  const h = splitmix64(splitmix64(splitmix64(seed & MASK64) ^ BigInt(x)) ^ BigInt(y));
  return unitInterval(h);
}

/** Row-major noise field over a (height, width) grid, one value per pixel. */
export function noiseField(seed: bigint, width: number, height: number): Float64Array {
  const out = new Float64Array(width * height);
  const base = splitmix64(seed & MASK64);
  const perColumn: bigint[] = new Array(width);
  for (let x = 0; x < width; x++) {
    perColumn[x] = splitmix64(base ^ BigInt(x));
  }
  for (let y = 0; y < height; y++) {
    const yBig = BigInt(y);
    for (let x = 0; x < width; x++) {
      out[y * width + x] = unitInterval(splitmix64(perColumn[x] ^ yBig));
    }
  }
  return out;
}

/** Accept a wire seed as decimal string or plain integer. */
export function parseSeed(raw: unknown): bigint {
  if (typeof raw === "string") {
    if (!/^\d+$/.test(raw)) {
      throw new Error(`seed string ${JSON.stringify(raw)} is not a decimal integer`);
    }
    return BigInt(raw) & MASK64;
  }
  if (typeof raw === "number" && Number.isInteger(raw) && raw >= 0) {
    return BigInt(raw) & MASK64;
  }
  if (raw === undefined || raw === null) {
    return 0n;
  }
  throw new Error("seed must be a non-negative integer or decimal string");
}
