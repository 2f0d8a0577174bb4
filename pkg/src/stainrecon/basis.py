"""Per-slide stain basis estimation (Macenko principal-plane method)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from stainrecon.errors import (
    DegeneratePlaneError,
    IllConditionedError,
    NoTissueError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)

Vector3 = Tuple[float, float, float]

UNIT_TOLERANCE = 1e-9
MAX_CONDITION = 1e6
# Second eigenvalue below this fraction of the first means a rank-1 cloud.
PLANE_EIGEN_RATIO = 1e-12


def _as_vector3(values: ArrayLike) -> Vector3:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"Expected a 3-vector, got shape {arr.shape}")
    return (float(arr[0]), float(arr[1]), float(arr[2]))


def _unit(values: ArrayLike) -> NDArray[np.float64]:
    arr = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not math.isfinite(norm):
        raise ZeroVectorError(f"Cannot normalize vector {arr.tolist()!r}")
    result: NDArray[np.float64] = arr / norm
    return result


@dataclass(frozen=True)
class StainBasis:
    """The three OD-space unit vectors of one slide.

    Columns of ``matrix`` are ``v_h``, ``v_e`` and ``v_res``; any OD pixel is
    ``alpha * v_h + beta * v_e + gamma * v_res``. Construction validates
    every invariant, so an existing instance is always usable.

    Raises:
        ValueError: If a vector is not unit length, a stain vector has a
            negative component, or ``v_res`` is not orthogonal to both.
        IllConditionedError: If the matrix condition number is >= 1e6.
    """

    v_h: Vector3
    v_e: Vector3
    v_res: Vector3

    def __post_init__(self) -> None:
        for name in ("v_h", "v_e", "v_res"):
            object.__setattr__(self, name, _as_vector3(getattr(self, name)))
            norm = float(np.linalg.norm(getattr(self, name)))
            if abs(norm - 1.0) > UNIT_TOLERANCE:
                raise ValueError(f"{name} must have unit norm, got |{name}| = {norm!r}")
        for name in ("v_h", "v_e"):
            if min(getattr(self, name)) < 0.0:
                raise ValueError(
                    f"{name} must have nonnegative components, got {getattr(self, name)!r}"
                )
        for name in ("v_h", "v_e"):
            dot = abs(float(np.dot(self.v_res, getattr(self, name))))
            if dot > UNIT_TOLERANCE:
                raise ValueError(f"v_res must be orthogonal to {name}, got |dot| = {dot!r}")
        if self.condition_number >= MAX_CONDITION:
            raise IllConditionedError(
                f"Stain basis condition number {self.condition_number:.3g} "
                f"is not below {MAX_CONDITION:.0e}; v_h and v_e are nearly parallel"
            )

    @classmethod
    def from_stain_vectors(cls, v_h: ArrayLike, v_e: ArrayLike) -> StainBasis:
        """Build a basis from two stain directions; ``v_res`` is their unit cross product.

        Both inputs are normalized first. Raises ``IllConditionedError`` when the
        two directions are (nearly) parallel.
        """
        h = _unit(v_h)
        e = _unit(v_e)
        cross = np.cross(h, e)
        if float(np.linalg.norm(cross)) < 1e-12:
            raise IllConditionedError("v_h and v_e are parallel; no residual direction exists")
        return cls(_as_vector3(h), _as_vector3(e), _as_vector3(_unit(cross)))

    @property
    def matrix(self) -> NDArray[np.float64]:
        """3x3 matrix with columns ``[v_h | v_e | v_res]``."""
        return np.column_stack([self.v_h, self.v_e, self.v_res]).astype(np.float64)

    @cached_property
    def inverse(self) -> NDArray[np.float64]:
        """Inverse of ``matrix``, computed once per basis."""
        result: NDArray[np.float64] = np.linalg.inv(self.matrix)
        return result

    @cached_property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    def to_dict(self) -> dict[str, list[float]]:
        return {"v_h": list(self.v_h), "v_e": list(self.v_e), "v_res": list(self.v_res)}


@dataclass(frozen=True)
class BasisConfig:
    """Macenko hyperparameters.

    Attributes:
        tissue_od_threshold: A pixel is tissue when its mean OD exceeds this.
        angle_percentile: Lower angle percentile (upper is ``100 - p``).
        min_tissue_pixels: Fewer tissue pixels than this raises ``NoTissueError``.
    """

    tissue_od_threshold: float = 0.15
    angle_percentile: float = 1.0
    min_tissue_pixels: int = 1000

    def __post_init__(self) -> None:
        if not self.tissue_od_threshold > 0:
            raise ValueError(
                f"tissue_od_threshold must be > 0, got {self.tissue_od_threshold!r}"
            )
        if not 0 < self.angle_percentile < 50:
            raise ValueError(
                f"angle_percentile must be in (0, 50), got {self.angle_percentile!r}"
            )
        if self.min_tissue_pixels < 1:
            raise ValueError(
                f"min_tissue_pixels must be >= 1, got {self.min_tissue_pixels!r}"
            )


@dataclass(frozen=True)
class ScatterAccumulator:
    """Mergeable first and second moments of an OD pixel cloud.

    ``merge`` is exact up to floating-point summation order; reduce chunks in
    a fixed order for bit-identical results.
    """

    count: int = 0
    total: Vector3 = (0.0, 0.0, 0.0)
    outer: Tuple[Vector3, Vector3, Vector3] = field(
        default=((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    )

    @classmethod
    def from_pixels(cls, pixels: ArrayLike) -> ScatterAccumulator:
        px = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
        total = px.sum(axis=0)
        outer = px.T @ px
        return cls(
            count=int(px.shape[0]),
            total=_as_vector3(total),
            outer=(
                _as_vector3(outer[0]),
                _as_vector3(outer[1]),
                _as_vector3(outer[2]),
            ),
        )

    def merge(self, other: ScatterAccumulator) -> ScatterAccumulator:
        total = np.add(self.total, other.total)
        outer = np.add(self.outer, other.outer)
        return ScatterAccumulator(
            count=self.count + other.count,
            total=_as_vector3(total),
            outer=(_as_vector3(outer[0]), _as_vector3(outer[1]), _as_vector3(outer[2])),
        )

    def covariance(self) -> NDArray[np.float64]:
        """Population covariance of the accumulated pixels."""
        if self.count == 0:
            raise NoTissueError("Cannot compute a covariance from zero pixels")
        mean = np.asarray(self.total) / self.count
        cov: NDArray[np.float64] = np.asarray(self.outer) / self.count - np.outer(mean, mean)
        # Symmetrize away rounding asymmetry before the eigen-solve.
        return (cov + cov.T) / 2.0


def tissue_mask(od: ArrayLike, cfg: BasisConfig | None = None) -> NDArray[np.bool_]:
    """Boolean mask of pixels whose mean OD exceeds the tissue threshold.

    Accepts any shape ``(..., 3)``; the mask has shape ``(...)``.
    """
    cfg = cfg or BasisConfig()
    arr = np.asarray(od)
    if arr.shape[-1] != 3:
        raise ValueError(f"OD pixels must have a trailing axis of 3, got {arr.shape}")
    mask: NDArray[np.bool_] = arr.mean(axis=-1, dtype=np.float64) > cfg.tissue_od_threshold
    return mask


def filter_tissue(pixels: ArrayLike, cfg: BasisConfig | None = None) -> NDArray[np.floating]:
    """Return exactly the OD pixels whose mean across channels exceeds the threshold.

    Args:
        pixels: OD pixels of shape ``(N, 3)`` or an OD image ``(H, W, 3)``.
        cfg: Basis configuration (threshold).

    Returns:
        ``(M, 3)`` array of tissue pixels, possibly empty, in input order.
    """
    arr = np.asarray(pixels)
    flat = arr.reshape(-1, 3)
    result: NDArray[np.floating] = flat[tissue_mask(flat, cfg)]
    return result


def _orient(vector: NDArray[np.float64]) -> NDArray[np.float64]:
    """Flip to a nonnegative orientation, drop residual negative components, normalize."""
    if vector.sum() < 0:
        vector = -vector
    clipped = np.clip(vector, 0.0, None)
    if float(np.linalg.norm(clipped)) == 0.0:
        raise DegeneratePlaneError(
            f"Extreme-angle direction {vector.tolist()!r} has no positive component"
        )
    return _unit(clipped)


def _is_hematoxylin_first(a: NDArray[np.float64], b: NDArray[np.float64]) -> bool:
    # Hematoxylin absorbs red most; ties fall back to green.
    if a[0] != b[0]:
        return bool(a[0] > b[0])
    return bool(a[1] >= b[1])


def select_angle_bounds(angles: ArrayLike, angle_percentile: float) -> tuple[float, float]:
    """Angles at the ``p`` and ``100 - p`` percentiles by exact selection.

    Returns elements of ``angles`` (sorted ranks ``floor(p/100 * (n-1))`` and
    ``ceil((100-p)/100 * (n-1))``), found with a partial sort rather than
    interpolated between neighbours.
    """
    arr = np.asarray(angles, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise NoTissueError("Cannot select angle percentiles from zero pixels")
    last = arr.size - 1
    low_rank = math.floor(angle_percentile * last / 100.0)
    high_rank = math.ceil((100.0 - angle_percentile) * last / 100.0)
    selected = np.partition(arr, (low_rank, high_rank))
    return float(selected[low_rank]), float(selected[high_rank])


def estimate_stain_basis(
    pixels: ArrayLike,
    cfg: BasisConfig | None = None,
    scatter: ScatterAccumulator | None = None,
) -> StainBasis:
    """Estimate ``(v_h, v_e, v_res)`` from OD pixels with the Macenko procedure.

    Steps: tissue filter, top-2 eigenvectors of the 3x3 covariance, angles of
    the projected pixels, stain directions at the ``p`` and ``100 - p``
    percentile angles, nonnegative orientation, H/E ordering by red OD,
    residual as the unit cross product.

    Args:
        pixels: OD pixels ``(N, 3)`` or an OD image ``(H, W, 3)``.
        cfg: Macenko hyperparameters.
        scatter: Moments of exactly the tissue pixels of ``pixels``, e.g. per-patch
            accumulators merged in a fixed order. Computed here when omitted.

    Returns:
        A fully validated ``StainBasis``.

    Raises:
        NoTissueError: Fewer than ``min_tissue_pixels`` tissue pixels.
        DegeneratePlaneError: The cloud is effectively rank 1.
        IllConditionedError: The resulting basis has condition number >= 1e6.

    Note:
        The rank-1 test only catches exactly collinear clouds. An 8-bit
        single-stain image still spreads off its line through rounding, so
        it yields two nearly parallel vectors (well under a degree apart)
        instead of ``DegeneratePlaneError``; ``IllConditionedError`` fires
        only once they are close enough to push the condition number to 1e6.
    """
    cfg = cfg or BasisConfig()
    tissue = np.asarray(filter_tissue(pixels, cfg), dtype=np.float64)
    if tissue.shape[0] < cfg.min_tissue_pixels:
        raise NoTissueError(
            f"Found {tissue.shape[0]} tissue pixels, need at least {cfg.min_tissue_pixels} "
            f"(mean OD > {cfg.tissue_od_threshold})"
        )

    if scatter is None:
        scatter = ScatterAccumulator.from_pixels(tissue)
    elif scatter.count != tissue.shape[0]:
        raise ValueError(
            f"scatter holds {scatter.count} pixels but {tissue.shape[0]} tissue pixels were given"
        )
    cov = scatter.covariance()
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    first, second = float(eigenvalues[2]), float(eigenvalues[1])
    if first <= 0.0 or second < PLANE_EIGEN_RATIO * first:
        raise DegeneratePlaneError(
            f"Tissue OD cloud is rank 1 (eigenvalues {first:.3g}, {second:.3g}); "
            "input looks single-stain or monochrome"
        )

    plane = eigenvectors[:, [2, 1]].copy()
    for col in range(2):
        if plane[:, col].sum() < 0:
            plane[:, col] = -plane[:, col]

    projected = tissue @ plane
    angles = np.arctan2(projected[:, 1], projected[:, 0])
    low, high = select_angle_bounds(angles, cfg.angle_percentile)
    v1 = _orient(plane @ np.array([math.cos(low), math.sin(low)]))
    v2 = _orient(plane @ np.array([math.cos(high), math.sin(high)]))
    v_h, v_e = (v1, v2) if _is_hematoxylin_first(v1, v2) else (v2, v1)

    basis = StainBasis.from_stain_vectors(v_h, v_e)
    logger.debug(
        "estimated stain basis from %d tissue pixels: v_h=%s v_e=%s",
        tissue.shape[0],
        basis.v_h,
        basis.v_e,
    )
    return basis


def angular_error(u: ArrayLike, v: ArrayLike) -> float:
    """Unsigned angle between two directions in degrees, in [0, 90].

    Examples:
        >>> angular_error((1, 0, 0), (0, 1, 0))
        90.0
    """
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("angular_error needs two nonzero vectors")
    cosine = min(1.0, abs(float(np.dot(a, b))) / (na * nb))
    return math.degrees(math.acos(cosine))
