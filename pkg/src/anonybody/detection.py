"""Person detection against a pluggable backend contract.

The interesting backend here is the oracle detector: it turns ground-truth
annotations into detections with confidence 1.0, which makes every
downstream stage exactly reproducible without a learned model. A remote
backend speaking the bridge protocol plugs into the same contract.

Rasterization convention (pinned): polygons are filled with the even-odd
rule sampled at pixel centers ``(x + 0.5, y + 0.5)``; a center is inside
iff an odd number of edge crossings lie strictly left of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol, Sequence

import numpy as np

from .errors import InvalidArgumentError, NotFoundError, UnsupportedFormatError
from .raster import BinaryMask, BoundingBox, RasterImage

if TYPE_CHECKING:
    from .dataset_io import CocoAnnotations

PERSON = "person"


@dataclass(frozen=True)
class InstanceDetection:
    """One detected instance: label, confidence, tight box, full-image mask."""

    class_label: str
    confidence: float
    box: BoundingBox
    mask: BinaryMask
    instance_index: int

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidArgumentError(f"confidence {self.confidence} outside [0, 1]")
        if self.mask.coverage < 1:
            raise InvalidArgumentError("detection mask is empty")
        inside = self.mask.bits[self.box.y_min:self.box.y_max, self.box.x_min:self.box.x_max]
        if int(inside.sum()) != self.mask.coverage:
            raise InvalidArgumentError("mask has set bits outside the bounding box")


@dataclass(frozen=True)
class DetectorConfig:
    confidence_threshold: float = 0.4
    class_filter: frozenset[str] = frozenset({PERSON})
    min_coverage: int = 16

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise InvalidArgumentError("confidence_threshold must lie in [0, 1]")
        if self.min_coverage < 1:
            raise InvalidArgumentError("min_coverage must be >= 1")
        object.__setattr__(self, "class_filter", frozenset(self.class_filter))


class DetectorBackend(Protocol):
    """Anything that yields raw detections for an image."""

    def raw_detections(self, image: RasterImage, image_id: str | None = None) -> list[InstanceDetection]:
        ...


def tight_box(mask: BinaryMask) -> BoundingBox:
    """Smallest box containing every set bit of a non-empty mask."""
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    if rows.size == 0:
        raise InvalidArgumentError("cannot bound an empty mask")
    return BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def rasterize_polygon(coords: Sequence[float], width: int, height: int) -> BinaryMask:
    """Fill one polygon (flat x0, y0, x1, y1, ... list), even-odd rule."""
    if len(coords) < 6 or len(coords) % 2 != 0:
        raise InvalidArgumentError("polygon needs an even coordinate count of at least 6")
    xs = np.asarray(coords[0::2], dtype=np.float64)
    ys = np.asarray(coords[1::2], dtype=np.float64)
    x2 = np.roll(xs, -1)
    y2 = np.roll(ys, -1)
    bits = np.zeros((height, width), dtype=bool)
    centers_x = np.arange(width, dtype=np.float64) + 0.5
    for row in range(height):
        yc = row + 0.5
        active = ((ys <= yc) & (yc < y2)) | ((y2 <= yc) & (yc < ys))
        if not active.any():
            continue
        cross = xs[active] + (yc - ys[active]) * (x2[active] - xs[active]) / (y2[active] - ys[active])
        count = (cross[None, :] < centers_x[:, None]).sum(axis=1)
        bits[row] = (count % 2) == 1
    return BinaryMask(bits)


def rasterize_segmentation(segmentation, width: int, height: int) -> BinaryMask:
    """Decode a COCO-style segmentation into a mask.

    Accepts a list of polygons (union of even-odd fills) or an uncompressed
    run-length dict with integer counts in column-major order. Compressed
    (string) counts are rejected.
    """
    if isinstance(segmentation, dict):
        counts = segmentation.get("counts")
        if isinstance(counts, (str, bytes)):
            raise UnsupportedFormatError(
                "compressed run-length segmentation ('counts' as a string) is not supported"
            )
        size = segmentation.get("size")
        if not isinstance(counts, list) or not isinstance(size, list) or len(size) != 2:
            raise InvalidArgumentError("run-length segmentation needs integer 'counts' and 'size'")
        h, w = int(size[0]), int(size[1])
        if h != height or w != width:
            raise InvalidArgumentError(f"run-length size {h}x{w} does not match image {height}x{width}")
        total = sum(int(c) for c in counts)
        if total != w * h:
            raise InvalidArgumentError(f"run lengths sum to {total}, expected {w * h}")
        flat = np.zeros(w * h, dtype=bool)
        pos = 0
        value = False
        for run in counts:
            run = int(run)
            if run < 0:
                raise InvalidArgumentError("negative run length")
            if value:
                flat[pos:pos + run] = True
            pos += run
            value = not value
        return BinaryMask(flat.reshape((h, w), order="F"))
    if isinstance(segmentation, list):
        bits = np.zeros((height, width), dtype=bool)
        for polygon in segmentation:
            bits |= rasterize_polygon(polygon, width, height).bits
        return BinaryMask(bits)
    raise UnsupportedFormatError(f"unsupported segmentation encoding: {type(segmentation).__name__}")


def oracle_detect(annotations: "CocoAnnotations", image_id: int) -> list[InstanceDetection]:
    """Ground-truth detections for one annotated image, confidence 1.0.

    One detection per annotation with a non-empty rasterized mask, ordered
    by annotation id. Raises ``NotFoundError`` for unknown image ids.
    """
    record = annotations.images.get(image_id)
    if record is None:
        raise NotFoundError(f"image id {image_id} not present in annotations")
    detections = []
    index = 0
    for ann in sorted(annotations.for_image(image_id), key=lambda a: a.id):
        mask = rasterize_segmentation(ann.segmentation, record.width, record.height)
        if mask.coverage < 1:
            continue
        detections.append(
            InstanceDetection(
                class_label=annotations.categories[ann.category_id],
                confidence=1.0,
                box=tight_box(mask),
                mask=mask,
                instance_index=index,
            )
        )
        index += 1
    return detections


@dataclass
class OracleDetectorBackend:
    """Detector backend driven by ground-truth annotations.

    Looks the image up by its file name (or bare id); images missing from
    the annotations yield zero detections so dataset runs degrade to
    copy-through instead of failing.
    """

    annotations: "CocoAnnotations"
    strict: bool = False

    def raw_detections(self, image: RasterImage, image_id: str | None = None) -> list[InstanceDetection]:
        if image_id is None:
            raise InvalidArgumentError("the oracle detector needs an image identifier")
        coco_id = self.annotations.resolve_image_id(image_id)
        if coco_id is None:
            if self.strict:
                raise NotFoundError(f"image {image_id!r} not present in annotations")
            return []
        return oracle_detect(self.annotations, coco_id)


def detect(image: RasterImage, config: DetectorConfig, backend: DetectorBackend,
           image_id: str | None = None) -> list[InstanceDetection]:
    """Run a backend and apply the configured filters.

    Survivors keep their relative order and are re-indexed so instance
    indices stay contiguous from 0.
    """
    if image.width < 1 or image.height < 1:
        raise InvalidArgumentError("cannot detect on an empty image")
    raw = backend.raw_detections(image, image_id=image_id)
    kept = []
    for det in raw:
        if det.class_label not in config.class_filter:
            continue
        if det.confidence < config.confidence_threshold:
            continue
        if det.mask.coverage < config.min_coverage:
            continue
        kept.append(det)
    return [
        InstanceDetection(d.class_label, d.confidence, d.box, d.mask, i)
        for i, d in enumerate(kept)
    ]
