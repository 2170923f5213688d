"""Classical anonymization baselines: blur, constant fill, pixelization.

All three only ever write pixels under the mask; everything else is
bit-identical to the input. Fill and pixelize are exact fixed points, so
applying them twice changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidArgumentError
from .raster import BinaryMask, RasterImage

METHODS = ("blur", "mask_fill", "pixelize")


@dataclass(frozen=True)
class ClassicalParams:
    method: str = "blur"
    blur_sigma: float = 8.0
    fill_value: tuple[float, float, float] = (0.5, 0.5, 0.5)
    block_size: int = 16

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown classical method {self.method!r}")
        if self.blur_sigma <= 0:
            raise InvalidArgumentError("blur_sigma must be positive")
        if self.block_size < 1:
            raise InvalidArgumentError("block_size must be >= 1")
        if len(self.fill_value) != 3 or not all(0.0 <= v <= 1.0 for v in self.fill_value):
            raise InvalidArgumentError("fill_value must be three unit-interval components")


def _blur(data: np.ndarray, mask: np.ndarray, sigma: float) -> np.ndarray:
    # filter the whole image first so edges inside the mask borrow true context
    blurred = gaussian_filter(data.astype(np.float64), sigma=(sigma, sigma, 0), mode="nearest")
    out = data.copy()
    out[mask] = np.clip(blurred, 0.0, 1.0).astype(np.float32)[mask]
    return out


def _fill(data: np.ndarray, mask: np.ndarray, value: tuple[float, float, float]) -> np.ndarray:
    out = data.copy()
    out[mask] = np.asarray(value, dtype=np.float32)
    return out


def _pixelize(data: np.ndarray, mask: np.ndarray, block: int) -> np.ndarray:
    """Replace each masked pixel with the mean of its block's masked pixels.

    Blocks are anchored at (0, 0). The mean is computed as
    ``anchor + mean(values - anchor)`` with the anchor being the block's
    first masked pixel, which makes a block of equal values an exact fixed
    point (the residuals are exactly zero).
    """
    height, width = mask.shape
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return data.copy()
    blocks_per_row = (width + block - 1) // block
    block_ids = (rows // block) * blocks_per_row + (cols // block)
    # np.nonzero scans row-major, so the first occurrence is the anchor pixel
    unique_ids, first_index, inverse = np.unique(block_ids, return_index=True, return_inverse=True)
    counts = np.bincount(inverse)
    out = data.copy()
    for channel in range(data.shape[2]):
        values = data[rows, cols, channel].astype(np.float64)
        anchors = values[first_index]
        residual_sums = np.bincount(inverse, weights=values - anchors[inverse])
        means = anchors + residual_sums / counts
        out[rows, cols, channel] = np.clip(means, 0.0, 1.0).astype(np.float32)[inverse]
    return out


def apply_classical(image: RasterImage, mask: BinaryMask, params: ClassicalParams) -> RasterImage:
    """Anonymize the masked region with the configured baseline."""
    if (mask.width, mask.height) != (image.width, image.height):
        raise InvalidArgumentError(
            f"mask {mask.width}x{mask.height} does not match image {image.width}x{image.height}"
        )
    if mask.coverage == 0:
        return image
    bits = mask.bits
    if params.method == "blur":
        out = _blur(image.data, bits, params.blur_sigma)
    elif params.method == "mask_fill":
        out = _fill(image.data, bits, params.fill_value)
    else:
        out = _pixelize(image.data, bits, params.block_size)
    return RasterImage(out)