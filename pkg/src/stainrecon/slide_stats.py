"""Per-slide stain-strength statistics (H_max, E_max) via mergeable histograms."""

from __future__ import annotations

import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence, TypeVar

import numpy as np
from numpy.typing import ArrayLike, NDArray

from stainrecon.basis import (
    BasisConfig,
    ScatterAccumulator,
    StainBasis,
    estimate_stain_basis,
    tissue_mask,
)
from stainrecon.errors import EmptyHistogramError, NoTissueError, ShapeMismatchError
from stainrecon.od import rgb_to_od_image
from stainrecon.separation import separate_array

logger = logging.getLogger(__name__)

DEFAULT_BIN_COUNT = 8192
DEFAULT_RANGE = (0.0, 5.0)
STRENGTH_PERCENTILE = 99.0

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True, eq=False)
class StainHistogram:
    """Fixed-bin histogram of concentration values over ``[lo, hi]``.

    Values below ``lo`` land in the first bin, values above ``hi`` in the
    last. Instances are immutable; ``accumulate`` and ``merge`` return new
    histograms.
    """

    bin_count: int = DEFAULT_BIN_COUNT
    lo: float = DEFAULT_RANGE[0]
    hi: float = DEFAULT_RANGE[1]
    counts: NDArray[np.int64] = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    total: int = 0

    def __post_init__(self) -> None:
        if self.bin_count < 1:
            raise ValueError(f"bin_count must be >= 1, got {self.bin_count!r}")
        if not self.hi > self.lo:
            raise ValueError(f"Histogram range must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.size == 0:
            counts = np.zeros(self.bin_count, dtype=np.int64)
        if counts.shape != (self.bin_count,):
            raise ShapeMismatchError(
                f"counts has shape {counts.shape}, expected ({self.bin_count},)"
            )
        if int(counts.sum()) != self.total:
            raise ValueError(f"sum(counts) = {int(counts.sum())} does not match total = {self.total}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.bin_count

    def edges(self) -> NDArray[np.float64]:
        """``bin_count + 1`` bin edges from ``lo`` to ``hi``."""
        return self.lo + np.arange(self.bin_count + 1, dtype=np.float64) * self.bin_width

    def same_shape(self, other: StainHistogram) -> bool:
        return (self.bin_count, self.lo, self.hi) == (other.bin_count, other.lo, other.hi)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StainHistogram):
            return NotImplemented
        return (
            self.same_shape(other)
            and self.total == other.total
            and bool(np.array_equal(self.counts, other.counts))
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"StainHistogram(bin_count={self.bin_count}, range=[{self.lo}, {self.hi}], "
            f"total={self.total})"
        )


def bin_indices(hist: StainHistogram, values: ArrayLike) -> NDArray[np.int64]:
    """Bin index of every value, clamped to ``[0, bin_count - 1]``."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("Histogram values must be finite")
    scaled = np.floor((arr - hist.lo) * hist.bin_count / (hist.hi - hist.lo))
    np.clip(scaled, 0, hist.bin_count - 1, out=scaled)
    return scaled.astype(np.int64)


def accumulate(hist: StainHistogram, values: ArrayLike) -> StainHistogram:
    """Return a histogram with every value of ``values`` added.

    Examples:
        >>> accumulate(StainHistogram(), [2.5]).counts[4096]
        1
    """
    idx = bin_indices(hist, values)
    if idx.size == 0:
        return hist
    added = np.bincount(idx, minlength=hist.bin_count).astype(np.int64)
    return StainHistogram(
        bin_count=hist.bin_count,
        lo=hist.lo,
        hi=hist.hi,
        counts=hist.counts + added,
        total=hist.total + int(idx.size),
    )


def merge(a: StainHistogram, b: StainHistogram) -> StainHistogram:
    """Element-wise sum of two histograms with identical bins.

    Raises:
        ShapeMismatchError: If bin counts or ranges differ.
    """
    if not a.same_shape(b):
        raise ShapeMismatchError(
            f"Cannot merge histograms with bins {a.bin_count}/[{a.lo}, {a.hi}] "
            f"and {b.bin_count}/[{b.lo}, {b.hi}]"
        )
    return StainHistogram(
        bin_count=a.bin_count,
        lo=a.lo,
        hi=a.hi,
        counts=a.counts + b.counts,
        total=a.total + b.total,
    )


def percentile(hist: StainHistogram, q: float) -> float:
    """Upper edge of the first bin whose cumulative count reaches ``ceil(q/100 * total)``.

    The result is never below the exact sorted-order percentile (same ceiling
    convention) and exceeds it by at most one bin width.

    Bins are half-open ``[lo + i*w, lo + (i+1)*w)``, so a value sitting exactly
    on a bin edge counts in the bin above it and a point mass at ``v`` reports
    ``v + w`` when ``v`` is an edge: the result lies in ``[v, v + w]``, closed
    at the top.

    Raises:
        EmptyHistogramError: If the histogram holds no values.
        ValueError: If ``q`` is not strictly between 0 and 100.
    """
    if hist.total == 0:
        raise EmptyHistogramError("Cannot take a percentile of an empty histogram")
    if not 0 < q < 100:
        raise ValueError(f"q must be in (0, 100), got {q!r}")
    rank = max(1, math.ceil(q * hist.total / 100.0))
    cumulative = np.cumsum(hist.counts)
    index = int(np.searchsorted(cumulative, rank, side="left"))
    return hist.lo + (index + 1) * hist.bin_width


def exact_percentile(values: ArrayLike, q: float) -> float:
    """Sorted-order percentile with the same ceiling-rank convention as ``percentile``."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise EmptyHistogramError("Cannot take a percentile of zero values")
    rank = max(1, math.ceil(q * arr.size / 100.0))
    return float(np.partition(arr, rank - 1)[rank - 1])


@dataclass(frozen=True)
class SlideStainStats:
    """Stain basis and 99th-percentile stain strengths of one slide."""

    slide_id: str
    basis: StainBasis
    h_max: float
    e_max: float
    n_tissue_pixels: int

    def __post_init__(self) -> None:
        if not self.slide_id:
            raise ValueError("slide_id must be non-empty")
        for name in ("h_max", "e_max"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite real, got {value!r}")
        if self.n_tissue_pixels < 1:
            raise ValueError(f"n_tissue_pixels must be >= 1, got {self.n_tissue_pixels!r}")

    def check_tissue_count(self, cfg: BasisConfig) -> None:
        """Raise ``NoTissueError`` if fewer than ``cfg.min_tissue_pixels`` back these stats."""
        if self.n_tissue_pixels < cfg.min_tissue_pixels:
            raise NoTissueError(
                f"Stats for slide {self.slide_id!r} rest on {self.n_tissue_pixels} tissue pixels, "
                f"need at least {cfg.min_tissue_pixels}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            **self.basis.to_dict(),
            "h_max": self.h_max,
            "e_max": self.e_max,
            "n_tissue_pixels": self.n_tissue_pixels,
        }

    @classmethod
    def from_dict(
        cls, slide_id: str, data: Mapping[str, Any], cfg: BasisConfig | None = None
    ) -> SlideStainStats:
        """Rebuild stats from their JSON form.

        Raises:
            NoTissueError: ``n_tissue_pixels`` is below ``cfg.min_tissue_pixels``
                (default config when ``cfg`` is None).
        """
        try:
            basis = StainBasis(
                tuple(data["v_h"]), tuple(data["v_e"]), tuple(data["v_res"])  # type: ignore[arg-type]
            )
            stats = cls(
                slide_id=slide_id,
                basis=basis,
                h_max=float(data["h_max"]),
                e_max=float(data["e_max"]),
                n_tissue_pixels=int(data["n_tissue_pixels"]),
            )
        except KeyError as e:
            raise ValueError(f"Stats entry for slide {slide_id!r} is missing field {e}") from e
        stats.check_tissue_count(cfg or BasisConfig())
        return stats


@dataclass(frozen=True)
class SlideStatsResult:
    """Stats of one slide together with the histograms they were read from."""

    stats: SlideStainStats
    alpha_hist: StainHistogram
    beta_hist: StainHistogram


def patch_tissue_od(image: ArrayLike, cfg: BasisConfig | None = None) -> NDArray[np.float32]:
    """Tissue OD pixels ``(M, 3)`` of one uint8 RGB patch, float32."""
    od = rgb_to_od_image(image)
    result: NDArray[np.float32] = od[tissue_mask(od, cfg)]
    return result


def concentration_histograms(
    tissue_od: ArrayLike,
    basis: StainBasis,
    bin_count: int = DEFAULT_BIN_COUNT,
) -> tuple[StainHistogram, StainHistogram]:
    """Alpha and beta histograms of already-filtered tissue OD pixels."""
    conc = separate_array(np.asarray(tissue_od).reshape(-1, 3), basis)
    empty = StainHistogram(bin_count=bin_count)
    return accumulate(empty, conc[:, 0]), accumulate(empty, conc[:, 1])


def _ordered_map(
    fn: Callable[[T], R], items: Sequence[T], executor: Executor | None
) -> Iterator[R]:
    if executor is None:
        return map(fn, items)
    return executor.map(fn, items)


def slide_stats_from_tissue(
    slide_id: str,
    tissue_chunks: Sequence[NDArray[np.floating]],
    cfg: BasisConfig | None = None,
    bin_count: int = DEFAULT_BIN_COUNT,
    q: float = STRENGTH_PERCENTILE,
    executor: Executor | None = None,
) -> SlideStatsResult:
    """Estimate the basis from all tissue chunks, then histogram their concentrations.

    Per-chunk scatter accumulators and histograms are merged in the given
    order, so the result is independent of how many workers ``executor`` runs.
    """
    cfg = cfg or BasisConfig()
    n_tissue = sum(int(chunk.shape[0]) for chunk in tissue_chunks)
    if n_tissue < cfg.min_tissue_pixels:
        raise NoTissueError(
            f"Slide {slide_id!r} has {n_tissue} tissue pixels, "
            f"need at least {cfg.min_tissue_pixels}"
        )
    scatter = ScatterAccumulator()
    for chunk_scatter in _ordered_map(ScatterAccumulator.from_pixels, list(tissue_chunks), executor):
        scatter = scatter.merge(chunk_scatter)
    all_tissue = np.concatenate([np.asarray(c).reshape(-1, 3) for c in tissue_chunks], axis=0)
    basis = estimate_stain_basis(all_tissue, cfg, scatter=scatter)
    del all_tissue

    alpha_hist = StainHistogram(bin_count=bin_count)
    beta_hist = StainHistogram(bin_count=bin_count)
    for chunk_alpha, chunk_beta in _ordered_map(
        lambda chunk: concentration_histograms(chunk, basis, bin_count),
        list(tissue_chunks),
        executor,
    ):
        alpha_hist = merge(alpha_hist, chunk_alpha)
        beta_hist = merge(beta_hist, chunk_beta)

    stats = SlideStainStats(
        slide_id=slide_id,
        basis=basis,
        h_max=percentile(alpha_hist, q),
        e_max=percentile(beta_hist, q),
        n_tissue_pixels=n_tissue,
    )
    logger.info(
        "slide %s: h_max=%.4f e_max=%.4f from %d tissue pixels",
        slide_id,
        stats.h_max,
        stats.e_max,
        n_tissue,
    )
    return SlideStatsResult(stats, alpha_hist, beta_hist)


def compute_slide_stats(
    slide_id: str,
    patches: Iterable[ArrayLike],
    cfg: BasisConfig | None = None,
    bin_count: int = DEFAULT_BIN_COUNT,
    q: float = STRENGTH_PERCENTILE,
) -> SlideStainStats:
    """H_max / E_max of a slide from all of its uint8 RGB patches.

    Raises:
        NoTissueError: Too few tissue pixels across the patches.
        DegeneratePlaneError: Propagated from basis estimation.
        IllConditionedError: Propagated from basis estimation.
    """
    chunks = [patch_tissue_od(patch, cfg) for patch in patches]
    return slide_stats_from_tissue(slide_id, chunks, cfg, bin_count, q).stats


def measure_stain_strength(
    image: ArrayLike,
    basis: StainBasis,
    mask: NDArray[np.bool_] | None = None,
    cfg: BasisConfig | None = None,
    q: float = STRENGTH_PERCENTILE,
    bin_count: int = DEFAULT_BIN_COUNT,
) -> tuple[float, float]:
    """Re-measure ``(H, E)`` strengths of one RGB image against a fixed basis.

    Args:
        image: uint8 RGB patch.
        basis: Basis to separate against (normally the source slide's).
        mask: Tissue mask to measure over. Defaults to the image's own
            tissue pixels; pass the source patch's mask when the image's
            stain strength was changed on purpose.
        cfg: Tissue threshold used when ``mask`` is None.
        q: Percentile.
        bin_count: Histogram resolution.
    """
    od = rgb_to_od_image(image)
    if mask is None:
        mask = tissue_mask(od, cfg)
    elif mask.shape != od.shape[:2]:
        raise ShapeMismatchError(f"mask shape {mask.shape} does not match image {od.shape[:2]}")
    tissue = od[mask]
    if tissue.shape[0] == 0:
        raise NoTissueError("No tissue pixels to measure")
    alpha_hist, beta_hist = concentration_histograms(tissue, basis, bin_count)
    return percentile(alpha_hist, q), percentile(beta_hist, q)


@dataclass(frozen=True)
class ChannelSummary:
    """Distribution of one stain's per-slide strength across slides."""

    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    covering_range: tuple[float, float]

    def to_dict(self) -> dict[str, Any]:
        return {
            "min": self.minimum,
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "max": self.maximum,
            "covering_range": list(self.covering_range),
        }


@dataclass(frozen=True)
class StrengthSummary:
    """Cross-slide summary of H_max and E_max."""

    n_slides: int
    coverage: float
    h: ChannelSummary
    e: ChannelSummary

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_slides": self.n_slides,
            "coverage": self.coverage,
            "h_max": self.h.to_dict(),
            "e_max": self.e.to_dict(),
        }


def _channel_summary(values: NDArray[np.float64], coverage: float) -> ChannelSummary:
    tail = (1.0 - coverage) / 2.0
    q1, median, q3, low, high = np.quantile(values, [0.25, 0.5, 0.75, tail, 1.0 - tail])
    return ChannelSummary(
        minimum=float(values.min()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        maximum=float(values.max()),
        covering_range=(float(low), float(high)),
    )


def summarize_strengths(
    stats: Mapping[str, SlideStainStats] | Iterable[SlideStainStats],
    coverage: float = 1.0,
) -> StrengthSummary:
    """Summarize how H_max and E_max vary across slides.

    ``covering_range`` is the central interval holding ``coverage`` of the
    slides; with ``coverage=1.0`` it is ``[min, max]``, the narrowest target
    range that covers every slide's strength.
    """
    if not 0 < coverage <= 1:
        raise ValueError(f"coverage must be in (0, 1], got {coverage!r}")
    items = list(stats.values()) if isinstance(stats, Mapping) else list(stats)
    if not items:
        raise ValueError("Cannot summarize strengths of zero slides")
    h = np.array([s.h_max for s in items], dtype=np.float64)
    e = np.array([s.e_max for s in items], dtype=np.float64)
    return StrengthSummary(
        n_slides=len(items),
        coverage=coverage,
        h=_channel_summary(h, coverage),
        e=_channel_summary(e, coverage),
    )
