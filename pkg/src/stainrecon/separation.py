"""Stain separation into (alpha, beta, gamma) and reconstruction back to OD / RGB."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from stainrecon.basis import StainBasis
from stainrecon.od import OdPixel, od_to_rgb_array

StainChannel = Literal["H", "E"]


@dataclass(frozen=True)
class Concentration:
    """Coefficients of one pixel along ``v_h``, ``v_e`` and ``v_res``.

    Raw solver output: ``alpha`` and ``beta`` may be slightly negative.
    """

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"Concentration.{name} must be finite, got {getattr(self, name)!r}")

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.alpha, self.beta, self.gamma], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ConcentrationMap:
    """Per-pixel concentrations of one patch, row-major.

    ``data`` has shape ``(height, width, 3)``; the last axis holds
    ``(alpha, beta, gamma)``.
    """

    width: int
    height: int
    data: NDArray[np.float64]

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.size != self.width * self.height * 3:
            raise ValueError(
                f"ConcentrationMap data has {data.size} values, expected "
                f"3 * width * height = {3 * self.width * self.height}"
            )
        object.__setattr__(self, "data", data.reshape(self.height, self.width, 3))

    @classmethod
    def from_array(cls, data: ArrayLike) -> ConcentrationMap:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"Concentration array must have shape (H, W, 3), got {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr)

    @classmethod
    def zeros(cls, width: int, height: int) -> ConcentrationMap:
        return cls(width=width, height=height, data=np.zeros((height, width, 3)))

    @property
    def alpha(self) -> NDArray[np.float64]:
        return self.data[..., 0]

    @property
    def beta(self) -> NDArray[np.float64]:
        return self.data[..., 1]

    @property
    def gamma(self) -> NDArray[np.float64]:
        return self.data[..., 2]

    def at(self, row: int, col: int) -> Concentration:
        a, b, g = self.data[row, col]
        return Concentration(float(a), float(b), float(g))


PixelLike = Union[OdPixel, ArrayLike]


def _od_vector(pixel: PixelLike) -> NDArray[np.float64]:
    if isinstance(pixel, OdPixel):
        return pixel.as_array()
    arr = np.asarray(pixel, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"Expected one OD pixel of 3 channels, got shape {arr.shape}")
    return arr


def separate_pixel(pixel: PixelLike, basis: StainBasis) -> Concentration:
    """Solve ``od = alpha v_h + beta v_e + gamma v_res`` for one pixel.

    Examples:
        separate_pixel(OdPixel(*basis.v_h), basis)  # -> Concentration(1, 0, 0)
    """
    a, b, g = basis.inverse @ _od_vector(pixel)
    return Concentration(float(a), float(b), float(g))


def separate_array(od: ArrayLike, basis: StainBasis) -> NDArray[np.float64]:
    """Vectorized separation of OD pixels of any shape ``(..., 3)``.

    One precomputed inverse is applied to every pixel; the arithmetic runs
    in float64 regardless of the input dtype.
    """
    arr = np.asarray(od)
    if arr.shape[-1] != 3:
        raise ValueError(f"OD pixels must have a trailing axis of 3, got {arr.shape}")
    flat = arr.reshape(-1, 3).astype(np.float64, copy=False)
    result: NDArray[np.float64] = (flat @ basis.inverse.T).reshape(arr.shape)
    return result


def separate_image(od_image: ArrayLike, basis: StainBasis) -> ConcentrationMap:
    """Separate an ``(H, W, 3)`` OD image into a ``ConcentrationMap``."""
    arr = np.asarray(od_image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"OD image must have shape (H, W, 3), got {arr.shape}")
    return ConcentrationMap.from_array(separate_array(arr, basis))


def reconstruct_od_array(
    concentrations: ArrayLike,
    basis: StainBasis,
    include_residual: bool = False,
) -> NDArray[np.float64]:
    """Rebuild OD from concentrations of shape ``(..., 3)``.

    ``max(alpha, 0) v_h + max(beta, 0) v_e`` plus ``gamma v_res`` when
    ``include_residual``; each OD channel is clamped at 0.
    """
    conc = np.asarray(concentrations, dtype=np.float64)
    if conc.shape[-1] != 3:
        raise ValueError(f"Concentrations must have a trailing axis of 3, got {conc.shape}")
    weights = conc.reshape(-1, 3).copy()
    np.maximum(weights[:, :2], 0.0, out=weights[:, :2])
    if not include_residual:
        weights[:, 2] = 0.0
    od = weights @ basis.matrix.T
    np.maximum(od, 0.0, out=od)
    result: NDArray[np.float64] = od.reshape(conc.shape)
    return result


def reconstruct_od(
    concentration: Concentration,
    basis: StainBasis,
    include_residual: bool = False,
) -> OdPixel:
    """Rebuild one OD pixel; see ``reconstruct_od_array``."""
    od = reconstruct_od_array(concentration.as_array(), basis, include_residual)
    return OdPixel(float(od[0]), float(od[1]), float(od[2]))


def reconstruct_rgb(
    concentration_map: ConcentrationMap,
    basis: StainBasis,
    include_residual: bool = False,
) -> NDArray[np.uint8]:
    """Rebuild an 8-bit RGB image from a concentration map."""
    return od_to_rgb_array(reconstruct_od_array(concentration_map.data, basis, include_residual))


def _check_channel(channel: str) -> None:
    if channel not in ("H", "E"):
        raise ValueError(f"channel must be 'H' or 'E', got {channel!r}")


def render_single_stain(
    concentration_map: ConcentrationMap,
    basis: StainBasis,
    channel: StainChannel,
) -> NDArray[np.uint8]:
    """Render the H-only or E-only RGB image of a patch.

    The other stain's coefficient is forced to zero and the residual is
    dropped before converting back to RGB.
    """
    _check_channel(channel)
    data = concentration_map.data.copy()
    data[..., 1 if channel == "H" else 0] = 0.0
    return od_to_rgb_array(reconstruct_od_array(data, basis, include_residual=False))


def render_od_channel(
    concentration_map: ConcentrationMap,
    channel: StainChannel,
    scale: float,
) -> NDArray[np.uint8]:
    """Grayscale OD-space view of one stain: ``255 * clip(c / scale, 0, 1)``.

    Args:
        concentration_map: Separated patch.
        channel: ``"H"`` (alpha) or ``"E"`` (beta).
        scale: Concentration mapped to full brightness, typically the
            slide's H_max or E_max.
    """
    _check_channel(channel)
    if not scale > 0:
        raise ValueError(f"scale must be > 0, got {scale!r}")
    plane = concentration_map.alpha if channel == "H" else concentration_map.beta
    scaled = np.clip(plane / scale, 0.0, 1.0)
    return np.floor(scaled * 255.0 + 0.5).astype(np.uint8)
