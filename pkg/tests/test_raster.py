"""Core type and resampling behavior."""

from __future__ import annotations

import numpy as np
import pytest

from anonybody.errors import InvalidArgumentError
from anonybody.raster import (
    BinaryMask,
    BoundingBox,
    RasterImage,
    dilate,
    erode,
    from_uint8,
    inner_depth,
    quantize,
    resize,
    resize_mask,
    to_uint8,
)

from conftest import make_image, make_mask


def brute_force_dilate(bits: np.ndarray, radius: int) -> np.ndarray:
    height, width = bits.shape
    out = np.zeros_like(bits)
    for y in range(height):
        for x in range(width):
            y0, y1 = max(0, y - radius), min(height, y + radius + 1)
            x0, x1 = max(0, x - radius), min(width, x + radius + 1)
            out[y, x] = bits[y0:y1, x0:x1].any()
    return out


class TestRasterImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            RasterImage(np.full((2, 2, 3), 1.5, dtype=np.float32))

    def test_rejects_wrong_shape(self):
        with pytest.raises(InvalidArgumentError):
            RasterImage(np.zeros((2, 2), dtype=np.float32))

    def test_data_is_frozen(self, rng):
        image = make_image(rng, 4, 4)
        with pytest.raises(ValueError):
            image.data[0, 0, 0] = 0.0

    def test_quantize_is_projection(self, rng):
        image = RasterImage(rng.random((9, 7, 3)).astype(np.float32))
        once = quantize(image)
        twice = quantize(once)
        assert np.array_equal(once.data, twice.data)

    def test_quantize_rounds_half_up(self):
        image = RasterImage(np.full((1, 1, 3), 0.5 / 255.0 + 1e-9, dtype=np.float32))
        assert to_uint8(image)[0, 0, 0] == 1

    def test_uint8_round_trip(self, rng):
        arr = rng.integers(0, 256, size=(5, 6, 3), dtype=np.uint8)
        assert np.array_equal(to_uint8(from_uint8(arr)), arr)


class TestResize:
    def test_identity_same_dimensions(self, rng):
        image = make_image(rng, 16, 16)
        for filt in ("bilinear", "nearest"):
            assert resize(image, 16, 16, filt) is image

    def test_constant_field_bilinear(self):
        image = RasterImage(np.full((2, 2, 3), 0.5, dtype=np.float32))
        out = resize(image, 4, 4, "bilinear")
        assert np.array_equal(out.data, np.full((4, 4, 3), 0.5, dtype=np.float32))

    @pytest.mark.parametrize("filt", ["bilinear", "nearest"])
    def test_constant_field_general(self, rng, filt):
        value = np.float32(0.34901962)  # 89/255
        image = RasterImage(np.full((5, 3, 3), value, dtype=np.float32))
        out = resize(image, 11, 7, filt)
        assert np.array_equal(out.data, np.full((7, 11, 3), value, dtype=np.float32))

    def test_nearest_hand_traced(self):
        # index map floor((i + 0.5) / 2): 2x1 [0.0, 1.0] -> [0, 0, 1, 1]
        image = RasterImage(np.array([[[0.0] * 3, [1.0] * 3]], dtype=np.float32))
        out = resize(image, 4, 1, "nearest")
        assert out.data[0, :, 0].tolist() == [0.0, 0.0, 1.0, 1.0]

    def test_zero_dimension_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            resize(make_image(rng, 4, 4), 0, 4)

    def test_unknown_filter_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            resize(make_image(rng, 4, 4), 2, 2, "bicubic")

    def test_requested_dimensions(self, rng):
        out = resize(make_image(rng, 10, 6), 7, 13, "bilinear")
        assert (out.width, out.height) == (7, 13)

    def test_mask_resize_binarizes(self, rng):
        mask = make_mask(rng, 8, 8)
        out = resize_mask(mask, 4, 4)
        assert out.bits.dtype == np.bool_
        assert (out.width, out.height) == (4, 4)


class TestDilate:
    def test_radius_zero_identity(self, rng):
        mask = make_mask(rng, 9, 5)
        assert dilate(mask, 0) is mask

    def test_center_bit_radius_one(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[2, 2] = True
        out = dilate(BinaryMask(bits), 1)
        expected = np.zeros((5, 5), dtype=bool)
        expected[1:4, 1:4] = True
        assert np.array_equal(out.bits, expected)

    def test_two_corner_bits_radius_two(self):
        # brute-force Chebyshev check over all 25 pixels; the two clipped
        # 3x3 corner balls share pixel (2, 2), so the union holds 17 bits
        bits = np.zeros((5, 5), dtype=bool)
        bits[0, 0] = True
        bits[4, 4] = True
        out = dilate(BinaryMask(bits), 2)
        assert np.array_equal(out.bits, brute_force_dilate(bits, 2))
        assert out.coverage == 17

    def test_matches_brute_force_random(self, rng):
        for _ in range(25):
            width = int(rng.integers(3, 12))
            height = int(rng.integers(3, 12))
            radius = int(rng.integers(0, 4))
            mask = make_mask(rng, width, height, density=0.25)
            assert np.array_equal(dilate(mask, radius).bits,
                                  brute_force_dilate(mask.bits, radius))

    def test_monotone_in_radius(self, rng):
        for _ in range(50):
            mask = make_mask(rng, int(rng.integers(4, 16)), int(rng.integers(4, 16)),
                             density=0.2)
            a = int(rng.integers(0, 3))
            b = a + int(rng.integers(0, 3))
            small = dilate(mask, a).bits
            large = dilate(mask, b).bits
            assert np.array_equal(small & large, small)  # small is a subset

    def test_negative_radius_rejected(self, rng):
        with pytest.raises(InvalidArgumentError):
            dilate(make_mask(rng, 4, 4), -1)


class TestErodeDepth:
    def test_erode_inverse_on_interior(self):
        bits = np.zeros((9, 9), dtype=bool)
        bits[2:7, 2:7] = True
        eroded = erode(BinaryMask(bits), 1)
        expected = np.zeros((9, 9), dtype=bool)
        expected[3:6, 3:6] = True
        assert np.array_equal(eroded.bits, expected)

    def test_inner_depth_ramp(self):
        bits = np.zeros((7, 7), dtype=bool)
        bits[1:6, 1:6] = True
        depth = inner_depth(BinaryMask(bits), 5)
        assert depth[0, 0] == 0
        assert depth[1, 1] == 1
        assert depth[2, 2] == 2
        assert depth[3, 3] == 3


class TestBoundingBox:
    def test_degenerate_rejected(self):
        with pytest.raises(InvalidArgumentError):
            BoundingBox(5, 0, 5, 4)

    def test_dimensions(self):
        box = BoundingBox(1, 2, 4, 8)
        assert (box.width, box.height) == (3, 6)
        assert box.within(4, 8)
        assert not box.within(3, 8)
