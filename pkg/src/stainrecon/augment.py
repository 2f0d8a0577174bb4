"""Stain Reconstruction Augmentation (SRA) and the traditional stain augmentation baseline (TSA).

SRA normalizes each stain channel by its slide strength and rescales it to a
strength drawn from an absolute target range, so the output strength does not
depend on the source slide. TSA jitters each channel by a small random scale
and bias, which keeps the output tied to the source strength.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, NamedTuple, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from stainrecon.errors import SlideMismatchError
from stainrecon.od import od_to_rgb_array, rgb_to_od_image
from stainrecon.seeding import AugmentationSeed
from stainrecon.separation import reconstruct_od_array, separate_array
from stainrecon.slide_stats import SlideStainStats

logger = logging.getLogger(__name__)

Range = Tuple[float, float]
DroppedChannel = Literal["H", "E", ""]


def _check_range(name: str, value: Range) -> Range:
    lo, hi = (float(v) for v in value)
    if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo <= hi):
        raise ValueError(f"{name} must satisfy 0 < lo <= hi, got [{lo}, {hi}]")
    return (lo, hi)


def _check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value!r}")


@dataclass(frozen=True)
class SraConfig:
    """Target strength ranges and channel-drop settings for SRA.

    Attributes:
        h_range: Interval the new H_max is drawn from.
        e_range: Interval the new E_max is drawn from.
        p_drop: Probability that one of the two coefficients is zeroed.
        include_residual: Keep the residual channel when reconstructing.
        drop_h_probability: Given a drop, probability that H (not E) is dropped.
        shared_views: Draw the same coefficients for every view of a patch.
    """

    h_range: Range = (0.5, 2.0)
    e_range: Range = (0.2, 2.0)
    p_drop: float = 0.0
    include_residual: bool = False
    drop_h_probability: float = 0.5
    shared_views: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "h_range", _check_range("h_range", self.h_range))
        object.__setattr__(self, "e_range", _check_range("e_range", self.e_range))
        _check_probability("p_drop", self.p_drop)
        _check_probability("drop_h_probability", self.drop_h_probability)


# Experiment configurations: the narrow range marginally covers the observed
# per-slide strengths; the wide range adds pure single-stain views.
SRA_PRESETS: dict[str, SraConfig] = {
    "narrow": SraConfig(h_range=(0.5, 2.0), e_range=(0.2, 2.0), p_drop=0.0),
    "wide": SraConfig(h_range=(0.1, 2.5), e_range=(0.1, 2.5), p_drop=0.0),
    "wide-drop": SraConfig(h_range=(0.1, 2.5), e_range=(0.1, 2.5), p_drop=0.1),
}


@dataclass(frozen=True)
class TsaConfig:
    """Half-widths of the per-channel scale (around 1) and bias (around 0)."""

    scale_halfwidth: float = 0.05
    bias_halfwidth: float = 0.05
    include_residual: bool = False

    def __post_init__(self) -> None:
        for name in ("scale_halfwidth", "bias_halfwidth"):
            value = getattr(self, name)
            if not 0.0 <= value <= 0.5:
                raise ValueError(f"{name} must be in [0, 0.5], got {value!r}")


class AugmentationDraw(NamedTuple):
    """Coefficients used for one SRA view, as written to the augmentation log."""

    coef_h: float
    coef_e: float
    dropped_channel: DroppedChannel


class TsaDraw(NamedTuple):
    scale_h: float
    bias_h: float
    scale_e: float
    bias_e: float


def _view_seed(cfg: SraConfig, seed: AugmentationSeed) -> AugmentationSeed:
    if cfg.shared_views:
        return AugmentationSeed(seed.master_seed, seed.patch_index, 0)
    return seed


def draw_coefficients(cfg: SraConfig, seed: AugmentationSeed) -> AugmentationDraw:
    """Sample ``(coef_h, coef_e)`` and the drop decision for one view.

    Always consumes four uniforms in the same order (coef_h, coef_e, drop,
    which channel), so a seed maps to the same draw under every config.
    """
    rng = _view_seed(cfg, seed).generator()
    u_h, u_e, u_drop, u_which = rng.random(4)
    (h_lo, h_hi), (e_lo, e_hi) = cfg.h_range, cfg.e_range
    coef_h = h_lo + (h_hi - h_lo) * float(u_h)
    coef_e = e_lo + (e_hi - e_lo) * float(u_e)
    if u_drop < cfg.p_drop:
        if u_which < cfg.drop_h_probability:
            return AugmentationDraw(0.0, coef_e, "H")
        return AugmentationDraw(coef_h, 0.0, "E")
    return AugmentationDraw(coef_h, coef_e, "")


def sample_coefficients(cfg: SraConfig, seed: AugmentationSeed) -> tuple[float, float]:
    """``(coef_h, coef_e)`` for one view; at most one of them is zero."""
    draw = draw_coefficients(cfg, seed)
    return draw.coef_h, draw.coef_e


def draw_tsa(cfg: TsaConfig, seed: AugmentationSeed) -> TsaDraw:
    rng = seed.generator()
    u = rng.random(4)
    return TsaDraw(
        scale_h=1.0 + cfg.scale_halfwidth * (2.0 * float(u[0]) - 1.0),
        bias_h=cfg.bias_halfwidth * (2.0 * float(u[1]) - 1.0),
        scale_e=1.0 + cfg.scale_halfwidth * (2.0 * float(u[2]) - 1.0),
        bias_e=cfg.bias_halfwidth * (2.0 * float(u[3]) - 1.0),
    )


def _check_slide(stats: SlideStainStats, slide_id: str | None) -> None:
    if slide_id is not None and slide_id != stats.slide_id:
        raise SlideMismatchError(
            f"Patch belongs to slide {slide_id!r} but stats are for slide {stats.slide_id!r}"
        )


def _separate_rgb(image: ArrayLike, stats: SlideStainStats) -> NDArray[np.float64]:
    od = rgb_to_od_image(image)
    return separate_array(od, stats.basis)


def _rebuild(
    conc: NDArray[np.float64], stats: SlideStainStats, include_residual: bool
) -> NDArray[np.uint8]:
    return od_to_rgb_array(reconstruct_od_array(conc, stats.basis, include_residual))


def apply_sra(
    image: ArrayLike,
    stats: SlideStainStats,
    coef_h: float,
    coef_e: float,
    include_residual: bool = False,
) -> NDArray[np.uint8]:
    """Rescale a patch's stains to the given target strengths.

    ``alpha`` is multiplied by ``coef_h / h_max`` and ``beta`` by
    ``coef_e / e_max`` after clamping both at zero, so a zero coefficient
    removes that stain completely.
    """
    if coef_h < 0 or coef_e < 0:
        raise ValueError(f"Coefficients must be >= 0, got coef_h={coef_h!r}, coef_e={coef_e!r}")
    conc = _separate_rgb(image, stats)
    np.maximum(conc[..., :2], 0.0, out=conc[..., :2])
    conc[..., 0] *= coef_h / stats.h_max
    conc[..., 1] *= coef_e / stats.e_max
    return _rebuild(conc, stats, include_residual)


def apply_tsa(
    image: ArrayLike,
    stats: SlideStainStats,
    draw: TsaDraw,
    include_residual: bool = False,
) -> NDArray[np.uint8]:
    """``alpha * s_h + b_h`` and ``beta * s_e + b_e``, then reconstruct."""
    conc = _separate_rgb(image, stats)
    conc[..., 0] = conc[..., 0] * draw.scale_h + draw.bias_h
    conc[..., 1] = conc[..., 1] * draw.scale_e + draw.bias_e
    return _rebuild(conc, stats, include_residual)


def sra_view(
    image: ArrayLike,
    stats: SlideStainStats,
    cfg: SraConfig,
    seed: AugmentationSeed,
    slide_id: str | None = None,
) -> tuple[NDArray[np.uint8], AugmentationDraw]:
    """One SRA view plus the draw that produced it."""
    _check_slide(stats, slide_id)
    draw = draw_coefficients(cfg, seed)
    out = apply_sra(image, stats, draw.coef_h, draw.coef_e, cfg.include_residual)
    return out, draw


def sra_augment(
    image: ArrayLike,
    stats: SlideStainStats,
    cfg: SraConfig,
    seed: AugmentationSeed,
    slide_id: str | None = None,
) -> NDArray[np.uint8]:
    """Augment one RGB patch with SRA.

    Args:
        image: uint8 RGB patch ``(H, W, 3)``.
        stats: Statistics of the slide the patch came from.
        cfg: Target ranges and drop settings.
        seed: Determines every random draw of this view.
        slide_id: The patch's slide, checked against ``stats.slide_id``.

    Raises:
        SlideMismatchError: ``slide_id`` differs from ``stats.slide_id``.
    """
    return sra_view(image, stats, cfg, seed, slide_id)[0]


def tsa_view(
    image: ArrayLike,
    stats: SlideStainStats,
    cfg: TsaConfig,
    seed: AugmentationSeed,
    slide_id: str | None = None,
) -> tuple[NDArray[np.uint8], TsaDraw]:
    _check_slide(stats, slide_id)
    draw = draw_tsa(cfg, seed)
    return apply_tsa(image, stats, draw, cfg.include_residual), draw


def tsa_augment(
    image: ArrayLike,
    stats: SlideStainStats,
    cfg: TsaConfig,
    seed: AugmentationSeed,
    slide_id: str | None = None,
) -> NDArray[np.uint8]:
    """Augment one RGB patch with the scale-and-bias baseline."""
    return tsa_view(image, stats, cfg, seed, slide_id)[0]
