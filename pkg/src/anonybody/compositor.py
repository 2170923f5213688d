"""Coverage-ordered merging of per-instance results into the final image.

Per-instance anonymization can run in any order, so the finished layers
arrive unordered. Mask coverage (set-pixel count) stands in for depth:
small coverage is assumed far away and merged first, large coverage last,
so foreground instances overwrite any overlap. Merging one layer at a time
into a running canvas in that order is the recursive stitching rule; the
result is independent of the order the layers were produced in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cropping import InstanceCrop, paste_back
from .errors import InvalidArgumentError
from .raster import BinaryMask, RasterImage

ORDER_COVERAGE = "coverage_ascending"
ORDER_EXTERNAL_DEPTH = "external_depth"


@dataclass(frozen=True)
class CompositeLayer:
    """One anonymized instance ready for merging."""

    result: RasterImage
    crop: InstanceCrop
    coverage: int
    instance_index: int

    def __post_init__(self):
        if self.coverage < 1:
            raise InvalidArgumentError("layer coverage must be >= 1")


@dataclass(frozen=True)
class OrderingStrategy:
    """How layers are sorted back-to-front.

    ``coverage_ascending`` is the shipped strategy. ``external_depth``
    accepts per-instance depth values from an outside estimator (larger =
    farther, merged first); no estimator ships with the package.
    """

    kind: str = ORDER_COVERAGE
    depths: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (ORDER_COVERAGE, ORDER_EXTERNAL_DEPTH):
            raise InvalidArgumentError(f"unknown ordering strategy {self.kind!r}")


def coverage(mask: BinaryMask) -> int:
    """Pixel coverage of a mask: the count of its 1-bits."""
    return mask.coverage


def order_layers(layers: list[CompositeLayer],
                 strategy: OrderingStrategy = OrderingStrategy()) -> list[int]:
    """Back-to-front merge order as a permutation of layer indices.

    Coverage ordering sorts ascending (smallest merged first), ties broken
    by ascending instance index so the order is stable across runs.
    """
    if strategy.kind == ORDER_COVERAGE:
        return sorted(range(len(layers)),
                      key=lambda i: (layers[i].coverage, layers[i].instance_index))
    missing = [l.instance_index for l in layers if l.instance_index not in strategy.depths]
    if missing:
        raise InvalidArgumentError(f"external depth missing for instances {missing}")
    return sorted(range(len(layers)),
                  key=lambda i: (-strategy.depths[layers[i].instance_index],
                                 layers[i].instance_index))


def recursive_stitch(base: RasterImage, layers: list[CompositeLayer],
                     strategy: OrderingStrategy = OrderingStrategy(),
                     feather: int = 0) -> RasterImage:
    """Merge layers into the base image, farthest first.

    Equivalent to pasting each layer serially into a running canvas in
    :func:`order_layers` order, so the output does not depend on how the
    layer list was ordered on arrival.
    """
    for layer in layers:
        if not layer.crop.placement.source_rect.within(base.width, base.height):
            raise InvalidArgumentError(
                f"layer for instance {layer.instance_index} places outside the base image"
            )
    canvas = base
    for index in order_layers(layers, strategy):
        layer = layers[index]
        canvas = paste_back(canvas, layer.result, layer.crop, feather)
    return canvas
