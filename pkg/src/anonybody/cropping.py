"""Turn detections into model-ready square crops and paste results back.

Crop geometry, in order:

1. expand the detection box outward by ``context_factor`` times the box
   side, per side, rounding outward to whole pixels
2. clamp the expanded box to the image (plain intersection)
3. grow the short axis symmetrically until the region is square; growth
   that would cross an image edge is shifted to the other side, and the
   region is only shrunk when the image itself is smaller than the target
   square

The dilated instance mask is carried twice: once resized to the backend
resolution (what the generator inpaints) and once at source resolution
(``support``). Paste-back writes only where both agree, so pixels outside
the dilated mask can never change no matter how lossy the resize round
trip was.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InvalidArgumentError
from .raster import (
    BinaryMask,
    BoundingBox,
    RasterImage,
    dilate,
    inner_depth,
    resize,
    resize_mask,
)

from .detection import InstanceDetection


@dataclass(frozen=True)
class CropPlacement:
    """Invertible mapping between crop coordinates and image coordinates."""

    source_rect: BoundingBox
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise InvalidArgumentError("placement scale must be positive")

    def to_crop(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.source_rect.x_min) * self.scale, (y - self.source_rect.y_min) * self.scale

    def to_image(self, cx: float, cy: float) -> tuple[float, float]:
        return cx / self.scale + self.source_rect.x_min, cy / self.scale + self.source_rect.y_min


@dataclass(frozen=True)
class InstanceCrop:
    """A padded square crop, its dilated mask, and the way home."""

    pixels: RasterImage
    mask: BinaryMask
    placement: CropPlacement
    support: BinaryMask  # dilated mask at source resolution; paste guard

    def __post_init__(self):
        if self.pixels.width != self.pixels.height:
            raise InvalidArgumentError("crop pixels must be square")
        if (self.mask.width, self.mask.height) != (self.pixels.width, self.pixels.height):
            raise InvalidArgumentError("crop mask must match crop pixel dimensions")
        rect = self.placement.source_rect
        if (self.support.width, self.support.height) != (rect.width, rect.height):
            raise InvalidArgumentError("support mask must match the source rect")

    @property
    def resolution(self) -> int:
        return self.pixels.width


def _expand_axis(lo: int, hi: int, target: int, bound: int) -> tuple[int, int]:
    """Grow [lo, hi) to length target inside [0, bound); shift before shrink."""
    grow = target - (hi - lo)
    lo2 = lo - grow // 2
    hi2 = lo2 + target
    if lo2 < 0:
        lo2, hi2 = 0, target
    if hi2 > bound:
        hi2 = bound
        lo2 = bound - target
    if lo2 < 0:
        lo2 = 0
    return lo2, hi2


def squared_source_rect(box: BoundingBox, context_factor: float, width: int, height: int) -> BoundingBox:
    """Apply the expand / clamp / square rules to a detection box."""
    if context_factor < 0:
        raise InvalidArgumentError("context_factor must be >= 0")
    pad_x = context_factor * box.width
    pad_y = context_factor * box.height
    x0 = max(0, math.floor(box.x_min - pad_x))
    x1 = min(width, math.ceil(box.x_max + pad_x))
    y0 = max(0, math.floor(box.y_min - pad_y))
    y1 = min(height, math.ceil(box.y_max + pad_y))
    if x1 - x0 < 1 or y1 - y0 < 1:
        raise DegenerateGeometryError("crop region collapsed while clamping")
    target = max(x1 - x0, y1 - y0)
    x0, x1 = _expand_axis(x0, x1, target, width)
    y0, y1 = _expand_axis(y0, y1, target, height)
    return BoundingBox(x0, y0, x1, y1)


def prepare_crop(image: RasterImage, det: InstanceDetection, resolution: int,
                 context_factor: float = 0.2, dilation: int = 0) -> InstanceCrop:
    """Build the backend-facing crop for one detection.

    The sub-image is resized bilinearly to ``resolution`` squared; the
    instance mask is dilated in full-image space, cropped, nearest-resized
    and re-binarized at 0.5.
    """
    if resolution < 1:
        raise InvalidArgumentError("resolution must be >= 1")
    if not det.box.within(image.width, image.height):
        raise InvalidArgumentError("detection box exceeds image bounds")
    rect = squared_source_rect(det.box, context_factor, image.width, image.height)
    sub = RasterImage(image.data[rect.y_min:rect.y_max, rect.x_min:rect.x_max])
    pixels = resize(sub, resolution, resolution, "bilinear")
    dilated = dilate(det.mask, dilation)
    support = BinaryMask(dilated.bits[rect.y_min:rect.y_max, rect.x_min:rect.x_max])
    mask = resize_mask(support, resolution, resolution)
    placement = CropPlacement(source_rect=rect, scale=resolution / rect.width)
    return InstanceCrop(pixels=pixels, mask=mask, placement=placement, support=support)


def paste_back(canvas: RasterImage, crop_result: RasterImage, crop: InstanceCrop,
               feather: int = 0) -> RasterImage:
    """Paste an anonymized crop into the canvas under the crop's mask.

    With ``feather`` 0 the replacement is a hard copy; with feather > 0 a
    linear alpha ramp ``min(depth, feather + 1) / (feather + 1)`` blends
    old and new over that many pixels inside the mask boundary. Pixels
    outside the mask are never written.
    """
    if feather < 0:
        raise InvalidArgumentError("feather must be >= 0")
    if (crop_result.width, crop_result.height) != (crop.pixels.width, crop.pixels.height):
        raise InvalidArgumentError(
            f"crop result is {crop_result.width}x{crop_result.height}, "
            f"expected {crop.pixels.width}x{crop.pixels.height}"
        )
    rect = crop.placement.source_rect
    if not rect.within(canvas.width, canvas.height):
        raise InvalidArgumentError("crop placement exceeds canvas bounds")
    region = resize(crop_result, rect.width, rect.height, "bilinear")
    back_mask = resize_mask(crop.mask, rect.width, rect.height)
    write = back_mask.bits & crop.support.bits
    if not write.any():
        return canvas
    out = canvas.mutable_copy()
    window = out[rect.y_min:rect.y_max, rect.x_min:rect.x_max]
    if feather == 0:
        window[write] = region.data[write]
    else:
        depth = inner_depth(BinaryMask(write), feather + 1)
        alpha = (np.minimum(depth, feather + 1) / float(feather + 1))[:, :, None]
        blended = window.astype(np.float64) + alpha * (region.data.astype(np.float64) - window)
        window[write] = np.clip(blended, 0.0, 1.0).astype(np.float32)[write]
    return RasterImage(out)
