"""Conversion between 8-bit RGB intensities and optical density (Beer-Lambert)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

# Incident light intensity: 8-bit white.
I0 = 255.0

# OD of the darkest representable intensity (the clamp floor of 1).
OD_MAX = -math.log10(1.0 / I0)


@dataclass(frozen=True)
class RgbPixel:
    """One pixel in 8-bit display space.

    Examples:
        RgbPixel(255, 255, 255)  # white
        RgbPixel(25, 250, 255).to_od()
    """

    r: int
    g: int
    b: int

    def __post_init__(self) -> None:
        for name in ("r", "g", "b"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= value <= 255:
                raise ValueError(
                    f"RgbPixel.{name} must be an integer in [0, 255], got {value!r}"
                )

    def as_array(self) -> NDArray[np.uint8]:
        return np.array([self.r, self.g, self.b], dtype=np.uint8)

    def to_od(self) -> OdPixel:
        return rgb_to_od(self)


@dataclass(frozen=True)
class OdPixel:
    """One pixel in optical-density space (base-10, dimensionless).

    Values above ``OD_MAX`` are accepted; they saturate on conversion to RGB.
    """

    od_r: float
    od_g: float
    od_b: float

    def __post_init__(self) -> None:
        for name in ("od_r", "od_g", "od_b"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(
                    f"OdPixel.{name} must be a finite nonnegative real, got {value!r}"
                )

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.od_r, self.od_g, self.od_b], dtype=np.float64)

    def to_rgb(self) -> RgbPixel:
        return od_to_rgb(self)


def rgb_to_od_array(rgb: ArrayLike, dtype: type[np.floating] = np.float64) -> NDArray[np.floating]:
    """Convert intensities of any shape ``(..., 3)`` to optical density.

    Per channel ``od = -log10(max(i, 1) / I0)``. Arithmetic runs in float64;
    the result is cast to ``dtype`` afterwards.

    Args:
        rgb: Array-like of intensities in [0, 255].
        dtype: Output float type. Image buffers use float32.

    Returns:
        Array of the same shape with values in [0, OD_MAX].
    """
    intensities = np.maximum(np.asarray(rgb, dtype=np.float64), 1.0)
    od = -np.log10(intensities / I0)
    # log10(1) is exactly 0, but guard against -0.0 and values above 255.
    np.clip(od, 0.0, OD_MAX, out=od)
    return od.astype(dtype, copy=False)


def od_to_rgb_array(od: ArrayLike) -> NDArray[np.uint8]:
    """Convert optical densities of any shape ``(..., 3)`` to 8-bit intensities.

    Per channel ``i = round_half_up(I0 * 10**(-od))`` clamped to [0, 255].
    Negative OD is treated as zero absorption.
    """
    od_arr = np.maximum(np.asarray(od, dtype=np.float64), 0.0)
    intensities = np.floor(I0 * np.power(10.0, -od_arr) + 0.5)
    np.clip(intensities, 0.0, 255.0, out=intensities)
    return intensities.astype(np.uint8)


def rgb_to_od(pixel: RgbPixel) -> OdPixel:
    """Map one RGB pixel to optical density.

    Examples:
        >>> rgb_to_od(RgbPixel(255, 255, 255))
        OdPixel(od_r=0.0, od_g=0.0, od_b=0.0)
    """
    od = rgb_to_od_array(pixel.as_array())
    return OdPixel(float(od[0]), float(od[1]), float(od[2]))


def od_to_rgb(pixel: OdPixel) -> RgbPixel:
    """Map one OD pixel back to 8-bit RGB (round-half-up, saturating).

    Examples:
        >>> od_to_rgb(OdPixel(1.0, 1.0, 1.0))
        RgbPixel(r=26, g=26, b=26)
    """
    rgb = od_to_rgb_array(pixel.as_array())
    return RgbPixel(int(rgb[0]), int(rgb[1]), int(rgb[2]))


def rgb_to_od_image(image: ArrayLike) -> NDArray[np.float32]:
    """Convert an ``(H, W, 3)`` uint8 image to a float32 OD image."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"RGB image must have shape (H, W, 3), got {arr.shape}")
    result: NDArray[np.float32] = rgb_to_od_array(arr, dtype=np.float32)  # type: ignore[assignment]
    return result


def od_to_rgb_image(od_image: ArrayLike) -> NDArray[np.uint8]:
    """Convert an ``(H, W, 3)`` OD image to uint8 RGB."""
    arr = np.asarray(od_image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"OD image must have shape (H, W, 3), got {arr.shape}")
    return od_to_rgb_array(arr)
