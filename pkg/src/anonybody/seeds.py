"""Deterministic 64-bit mixing used for mock noise and per-instance seeds.

The exact bit recipe is part of the backend contract: any other
implementation of the synthetic inpainting profile must reproduce these
values bit for bit. Everything below is built from the splitmix64
finalizer.

    splitmix64(z):
        z = (z + 0x9E3779B97F4A7C15) mod 2^64
        z = ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
        z = ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
        return z XOR (z >> 31)

    noise(seed, x, y)  = unit(splitmix64(splitmix64(splitmix64(seed) XOR x) XOR y))
    unit(v)            = (v >> 11) / 2^53, a float in [0, 1)

    instance_seed(g, image_id, i) =
        splitmix64(splitmix64(g XOR h64(image_id)) XOR i)

where h64(s) is the first 8 bytes, big endian, of SHA-256 of the UTF-8
encoded identifier. splitmix64 is a bijection, so instance seeds within
one image are pairwise distinct.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(value: int) -> int:
    """Apply the splitmix64 finalizer to a 64-bit integer."""
    z = (value + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def unit_interval(value: int) -> float:
    """Map a 64-bit integer to [0, 1) using the top 53 bits."""
    return (value >> 11) * 2.0**-53


def noise_value(seed: int, x: int, y: int) -> float:
    """Deterministic noise in [0, 1) for one pixel coordinate."""
    h = splitmix64(splitmix64(splitmix64(seed & _MASK64) ^ x) ^ y)
    return unit_interval(h)


def _splitmix64_array(values: np.ndarray) -> np.ndarray:
    z = (values + np.uint64(_GAMMA))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def noise_field(seed: int, width: int, height: int) -> np.ndarray:
    """Vectorized ``noise_value`` over a (height, width) coordinate grid."""
    xs = np.arange(width, dtype=np.uint64)[None, :]
    ys = np.arange(height, dtype=np.uint64)[:, None]
    base = np.uint64(splitmix64(seed & _MASK64))
    h = _splitmix64_array(base ^ xs)
    h = _splitmix64_array(np.broadcast_to(h, (height, width)) ^ ys)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def image_id_hash(image_id: str) -> int:
    """Stable 64-bit hash of an image identifier (SHA-256 prefix)."""
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def instance_seed(global_seed: int, image_id: str, instance_index: int) -> int:
    """Per-instance seed; pairwise distinct within one image."""
    base = splitmix64((global_seed & _MASK64) ^ image_id_hash(image_id))
    return splitmix64(base ^ (instance_index & _MASK64))
