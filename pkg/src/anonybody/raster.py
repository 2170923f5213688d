"""Core image, mask, and box types plus the resampling primitives.

Pixels live in unit-interval float32 everywhere inside the pipeline;
8-bit conversion happens only at file and wire boundaries. All values are
immutable after construction (backing arrays are frozen), so they can be
shared freely between worker threads.

Conventions pinned here so independent implementations agree bit for bit:

* resampling uses half-pixel-center alignment; the nearest-neighbor index
  map for output pixel ``i`` is ``floor((i + 0.5) * n_in / n_out)``,
  evaluated in exact integer arithmetic
* bilinear interpolation uses the ``a + t * (b - a)`` form so constant
  regions stay bit-exact
* 8-bit quantization rounds half up to 1/255 steps: ``floor(v * 255 + 0.5)``
* dilation uses the Chebyshev (square) structuring element
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

CHANNELS = 3


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RasterImage:
    """An H x W x 3 grid of unit-interval float32 intensities."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != CHANNELS:
            raise InvalidArgumentError(f"expected (H, W, {CHANNELS}) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidArgumentError("image dimensions must be at least 1x1")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise InvalidArgumentError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidArgumentError("intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(np.ascontiguousarray(arr)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return CHANNELS

    def mutable_copy(self) -> np.ndarray:
        return self.data.copy()


@dataclass(frozen=True)
class BinaryMask:
    """An H x W boolean grid annotating an image of the same shape."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise InvalidArgumentError(f"expected (H, W) mask, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            arr = arr.astype(np.bool_)
        object.__setattr__(self, "bits", _frozen(np.ascontiguousarray(arr)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def coverage(self) -> int:
        """Count of set pixels."""
        return int(self.bits.sum())


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box: min coordinates inclusive, max exclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (0 <= self.x_min < self.x_max and 0 <= self.y_min < self.y_max):
            raise InvalidArgumentError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    def within(self, width: int, height: int) -> bool:
        return self.x_max <= width and self.y_max <= height


def nearest_indices(n_out: int, n_in: int) -> np.ndarray:
    """Half-pixel-center nearest map, computed in exact integer arithmetic."""
    i = np.arange(n_out, dtype=np.int64)
    idx = ((2 * i + 1) * n_in) // (2 * n_out)
    return np.minimum(idx, n_in - 1)


def _resize_nearest(arr: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    rows = nearest_indices(new_h, arr.shape[0])
    cols = nearest_indices(new_w, arr.shape[1])
    return arr[np.ix_(rows, cols)]


def _axis_weights(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def _resize_bilinear(arr: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    y0, y1, ty = _axis_weights(new_h, arr.shape[0])
    x0, x1, tx = _axis_weights(new_w, arr.shape[1])
    a = arr.astype(np.float64)
    tx = tx[None, :, None]
    # lerp form keeps constant regions exact
    top = a[y0][:, x0] + tx * (a[y0][:, x1] - a[y0][:, x0])
    bot = a[y1][:, x0] + tx * (a[y1][:, x1] - a[y1][:, x0])
    out = top + ty[:, None, None] * (bot - top)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def resize(image: RasterImage, new_width: int, new_height: int, filter: str = "bilinear") -> RasterImage:
    """Resample an image with half-pixel-center alignment.

    ``filter`` is ``bilinear`` or ``nearest``. Resizing to the current
    dimensions returns the input unchanged for either filter.
    """
    if new_width < 1 or new_height < 1:
        raise InvalidArgumentError(f"requested size {new_width}x{new_height} has a zero dimension")
    if filter not in ("bilinear", "nearest"):
        raise InvalidArgumentError(f"unknown filter {filter!r}")
    if new_width == image.width and new_height == image.height:
        return image
    if filter == "nearest":
        return RasterImage(_resize_nearest(image.data, new_width, new_height))
    return RasterImage(_resize_bilinear(image.data, new_width, new_height))


def resize_mask(mask: BinaryMask, new_width: int, new_height: int) -> BinaryMask:
    """Nearest-resize a mask and re-binarize at 0.5."""
    if new_width < 1 or new_height < 1:
        raise InvalidArgumentError(f"requested size {new_width}x{new_height} has a zero dimension")
    if new_width == mask.width and new_height == mask.height:
        return mask
    resized = _resize_nearest(mask.bits.astype(np.float32), new_width, new_height)
    return BinaryMask(resized >= 0.5)


def dilate(mask: BinaryMask, radius: int) -> BinaryMask:
    """Grow a mask by ``radius`` in Chebyshev distance.

    A pixel is set in the output iff some input 1-bit lies within the
    (2r+1) x (2r+1) square centered on it. Radius 0 is the identity.
    """
    if radius < 0:
        raise InvalidArgumentError("dilation radius must be >= 0")
    if radius == 0:
        return mask
    horiz = mask.bits.copy()
    for d in range(1, radius + 1):
        horiz[:, d:] |= mask.bits[:, :-d]
        horiz[:, :-d] |= mask.bits[:, d:]
    out = horiz.copy()
    for d in range(1, radius + 1):
        out[d:, :] |= horiz[:-d, :]
        out[:-d, :] |= horiz[d:, :]
    return BinaryMask(out)


def erode(mask: BinaryMask, radius: int) -> BinaryMask:
    """Shrink a mask by ``radius``; dual of :func:`dilate`."""
    if radius < 0:
        raise InvalidArgumentError("erosion radius must be >= 0")
    if radius == 0:
        return mask
    inverted = BinaryMask(~mask.bits)
    return BinaryMask(~dilate(inverted, radius).bits)


def inner_depth(mask: BinaryMask, limit: int) -> np.ndarray:
    """Chebyshev distance to the nearest unset pixel, capped at ``limit``.

    Pixels outside the mask get 0; mask pixels adjacent to an unset pixel
    get 1. Area beyond the array border counts as unset, so a mask flush
    against the border still ramps there.
    """
    padded = np.zeros((mask.height + 2, mask.width + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask.bits
    depth = np.zeros(padded.shape, dtype=np.int32)
    current = BinaryMask(padded)
    for step in range(1, limit + 1):
        if not current.bits.any():
            break
        depth[current.bits] = step
        current = erode(current, 1)
    return depth[1:-1, 1:-1]


def to_uint8(image: RasterImage) -> np.ndarray:
    """Quantize to 8-bit, rounding half up."""
    scaled = np.floor(image.data.astype(np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> RasterImage:
    """Lift an 8-bit array onto the unit-interval grid."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise InvalidArgumentError(f"expected uint8 array, got {arr.dtype}")
    return RasterImage(arr.astype(np.float32) / np.float32(255.0))


def quantize(image: RasterImage) -> RasterImage:
    """Snap intensities to the 8-bit grid; a projection (idempotent)."""
    return from_uint8(to_uint8(image))
