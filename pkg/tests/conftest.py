"""Shared builders for synthetic images, masks, scenes, and COCO fixtures."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from anonybody.compositor import CompositeLayer
from anonybody.cropping import CropPlacement, InstanceCrop
from anonybody.raster import BinaryMask, BoundingBox, RasterImage, from_uint8


def make_image(rng: np.random.Generator, width: int, height: int) -> RasterImage:
    """Random image on the 8-bit grid, so PNG round trips are lossless."""
    return from_uint8(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))


def make_mask(rng: np.random.Generator, width: int, height: int,
              density: float = 0.5) -> BinaryMask:
    return BinaryMask(rng.random((height, width)) < density)


def square_polygon(x0: float, y0: float, x1: float, y1: float) -> list[float]:
    return [x0, y0, x1, y0, x1, y1, x0, y1]


def coco_payload(images: list[dict], annotations: list[dict],
                 categories: list[dict] | None = None) -> dict:
    return {
        "images": images,
        "annotations": annotations,
        "categories": categories if categories is not None else [{"id": 1, "name": "person"}],
    }


def square_person_fixture(image_size: int, squares: list[tuple[int, int, int]],
                          image_id: int = 1, file_name: str = "img.png") -> dict:
    """COCO payload with one full-square person polygon per (x, y, side)."""
    annotations = []
    for i, (x, y, side) in enumerate(squares):
        annotations.append({
            "id": i + 1,
            "image_id": image_id,
            "category_id": 1,
            "segmentation": [square_polygon(x, y, x + side, y + side)],
        })
    return coco_payload(
        images=[{"id": image_id, "file_name": file_name,
                 "width": image_size, "height": image_size}],
        annotations=annotations,
    )


def random_square_scene(rng: np.random.Generator, image_size: int,
                        instances: int, side: int) -> list[tuple[int, int, int]]:
    """Random (x, y, side) squares fully inside the image; overlap allowed."""
    squares = []
    for _ in range(instances):
        x = int(rng.integers(0, image_size - side + 1))
        y = int(rng.integers(0, image_size - side + 1))
        squares.append((x, y, side))
    return squares


def make_layer(rng: np.random.Generator, base: RasterImage, instance_index: int,
               side_range: tuple[int, int] = (8, 16)) -> CompositeLayer:
    """Scale-1 synthetic layer with a random square window and random mask."""
    side = int(rng.integers(side_range[0], side_range[1] + 1))
    x0 = int(rng.integers(0, base.width - side + 1))
    y0 = int(rng.integers(0, base.height - side + 1))
    rect = BoundingBox(x0, y0, x0 + side, y0 + side)
    bits = rng.random((side, side)) < 0.5
    if not bits.any():
        bits[side // 2, side // 2] = True
    mask = BinaryMask(bits)
    result = make_image(rng, side, side)
    crop = InstanceCrop(
        pixels=RasterImage(base.data[y0:y0 + side, x0:x0 + side]),
        mask=mask,
        placement=CropPlacement(source_rect=rect, scale=1.0),
        support=mask,
    )
    return CompositeLayer(result=result, crop=crop, coverage=mask.coverage,
                          instance_index=instance_index)


def serial_merge_oracle(base: RasterImage, layers: list[CompositeLayer]) -> np.ndarray:
    """Independent merge: direct array writes, farthest (smallest) first."""
    canvas = base.mutable_copy()
    for layer in sorted(layers, key=lambda l: (l.coverage, l.instance_index)):
        rect = layer.crop.placement.source_rect
        window = canvas[rect.y_min:rect.y_max, rect.x_min:rect.x_max]
        bits = layer.crop.support.bits
        window[bits] = layer.result.data[bits]
    return canvas


def write_dataset(tmp_path: Path, rng: np.random.Generator, count: int,
                  image_size: int = 48, instances: int = 2, side: int = 16,
                  name: str = "dataset") -> tuple[Path, Path]:
    """Materialize a synthetic dataset directory plus its annotation file."""
    from anonybody.dataset_io import write_image

    input_dir = tmp_path / name
    input_dir.mkdir(parents=True, exist_ok=True)
    images = []
    annotations = []
    ann_id = 1
    for index in range(count):
        file_name = f"img_{index:03d}.png"
        write_image(make_image(rng, image_size, image_size), input_dir / file_name)
        images.append({"id": index + 1, "file_name": file_name,
                       "width": image_size, "height": image_size})
        for x, y, s in random_square_scene(rng, image_size, instances, side):
            annotations.append({
                "id": ann_id,
                "image_id": index + 1,
                "category_id": 1,
                "segmentation": [square_polygon(x, y, x + s, y + s)],
            })
            ann_id += 1
    annotations_path = tmp_path / f"{name}_annotations.json"
    annotations_path.write_text(json.dumps(coco_payload(images, annotations)), encoding="utf-8")
    return input_dir, annotations_path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
