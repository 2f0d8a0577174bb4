"""Tests for RGB <-> optical density conversion."""

import math

import numpy as np
import pytest
from stainrecon.od import (
    OD_MAX,
    OdPixel,
    RgbPixel,
    od_to_rgb,
    od_to_rgb_array,
    od_to_rgb_image,
    rgb_to_od,
    rgb_to_od_array,
    rgb_to_od_image,
)


class TestRgbToOd:
    def test_white_is_zero(self):
        assert rgb_to_od(RgbPixel(255, 255, 255)) == OdPixel(0.0, 0.0, 0.0)

    def test_black_clamps_to_od_max(self):
        od = rgb_to_od(RgbPixel(0, 0, 0))
        assert od.od_r == pytest.approx(OD_MAX, abs=1e-12)
        assert OD_MAX == pytest.approx(math.log10(255.0))

    def test_zero_and_one_agree(self):
        assert np.array_equal(rgb_to_od_array([0, 0, 0]), rgb_to_od_array([1, 1, 1]))

    def test_known_value(self):
        od = rgb_to_od_array([25, 250, 255])
        assert od[0] == pytest.approx(-math.log10(25 / 255), abs=1e-15)
        assert od[2] == 0.0

    def test_monotone_decreasing(self):
        od = rgb_to_od_array(np.arange(1, 256))
        assert np.all(np.diff(od) < 0)

    def test_image_is_float32(self):
        image = np.full((4, 5, 3), 128, dtype=np.uint8)
        assert rgb_to_od_image(image).dtype == np.float32

    def test_image_shape_checked(self):
        with pytest.raises(ValueError, match="shape"):
            rgb_to_od_image(np.zeros((4, 5), dtype=np.uint8))


class TestOdToRgb:
    def test_zero_is_white(self):
        assert od_to_rgb(OdPixel(0.0, 0.0, 0.0)) == RgbPixel(255, 255, 255)

    def test_od_max_maps_to_one(self):
        assert od_to_rgb(OdPixel(OD_MAX, OD_MAX, OD_MAX)) == RgbPixel(1, 1, 1)

    def test_rounds_half_up(self):
        # 255 * 10**-1 = 25.5
        assert od_to_rgb(OdPixel(1.0, 1.0, 1.0)) == RgbPixel(26, 26, 26)

    def test_saturates_at_zero(self):
        assert od_to_rgb(OdPixel(5.0, 5.0, 5.0)) == RgbPixel(0, 0, 0)

    def test_negative_od_treated_as_white(self):
        assert np.array_equal(od_to_rgb_array([-0.1, -2.0, 0.0]), [255, 255, 255])

    def test_image_roundtrip_shape(self):
        od = np.zeros((3, 2, 3), dtype=np.float32)
        assert od_to_rgb_image(od).shape == (3, 2, 3)


class TestRoundTrip:
    def test_every_intensity_roundtrips(self):
        levels = np.arange(1, 256, dtype=np.uint8)
        assert np.array_equal(od_to_rgb_array(rgb_to_od_array(levels)), levels)

    def test_every_intensity_roundtrips_through_float32(self):
        levels = np.arange(1, 256, dtype=np.uint8)
        od32 = rgb_to_od_array(levels, dtype=np.float32)
        assert np.array_equal(od_to_rgb_array(od32), levels)

    def test_stratified_triplets(self):
        rng = np.random.default_rng(7)
        pixels = rng.integers(1, 256, size=(200_000, 3)).astype(np.uint8)
        assert np.array_equal(od_to_rgb_array(rgb_to_od_array(pixels)), pixels)

    def test_pixel_methods(self):
        pixel = RgbPixel(25, 250, 255)
        assert pixel.to_od().to_rgb() == pixel


class TestValidation:
    def test_rgb_out_of_range(self):
        with pytest.raises(ValueError, match="RgbPixel.r"):
            RgbPixel(256, 0, 0)

    def test_rgb_non_integer(self):
        with pytest.raises(ValueError):
            RgbPixel(1.5, 0, 0)  # type: ignore[arg-type]

    def test_od_negative(self):
        with pytest.raises(ValueError, match="nonnegative"):
            OdPixel(-0.1, 0.0, 0.0)

    def test_od_nan(self):
        with pytest.raises(ValueError):
            OdPixel(float("nan"), 0.0, 0.0)

    def test_od_above_max_accepted(self):
        assert OdPixel(10.0, 0.0, 0.0).od_r == 10.0
