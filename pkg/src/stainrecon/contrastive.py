"""InfoNCE and the cross-encoder / cross-augmentation contrastive loss terms.

Only the loss algebra lives here: features come from elsewhere (files or
tests), and gradients are analytic so the implementation can be checked
against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from stainrecon.errors import BadTemperatureError, ShapeMismatchError, ZeroRowError

DEFAULT_TAU = 0.2
NORM_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class FeatureBatch:
    """``n`` feature vectors of dimension ``d``, stored as an ``(n, d)`` float64 array."""

    n: int
    d: int
    data: NDArray[np.float64]

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.size != self.n * self.d:
            raise ShapeMismatchError(
                f"FeatureBatch data has {data.size} values, expected n * d = {self.n * self.d}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("FeatureBatch data must be finite")
        object.__setattr__(self, "data", data.reshape(self.n, self.d))

    @classmethod
    def from_array(cls, data: ArrayLike) -> FeatureBatch:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"Features must be a 2-D array, got shape {arr.shape}")
        return cls(n=arr.shape[0], d=arr.shape[1], data=arr)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.d)

    def is_normalized(self, tol: float = NORM_TOLERANCE) -> bool:
        norms = np.linalg.norm(self.data, axis=1)
        return bool(np.all(np.abs(norms - 1.0) <= tol))


def l2_normalize(batch: FeatureBatch) -> FeatureBatch:
    """Scale every row to unit Euclidean norm.

    Raises:
        ZeroRowError: If any row is all zeros.
    """
    norms = np.linalg.norm(batch.data, axis=1, keepdims=True)
    zero_rows = np.flatnonzero(norms[:, 0] == 0.0)
    if zero_rows.size:
        raise ZeroRowError(f"Rows {zero_rows.tolist()} have zero norm")
    return FeatureBatch(batch.n, batch.d, batch.data / norms)


def _check_pair(q: FeatureBatch, k: FeatureBatch, tau: float) -> None:
    if q.shape != k.shape:
        raise ShapeMismatchError(f"q has shape {q.shape} but k has shape {k.shape}")
    if q.n < 2:
        raise ShapeMismatchError(f"Contrastive loss needs at least 2 rows, got {q.n}")
    if not (math.isfinite(tau) and tau > 0):
        raise BadTemperatureError(f"tau must be a positive finite real, got {tau!r}")


def _logits(q: FeatureBatch, k: FeatureBatch, tau: float) -> NDArray[np.float64]:
    result: NDArray[np.float64] = (q.data @ k.data.T) / tau
    return result


def _softmax_rows(logits: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Row softmax and row log-sum-exp, both with max subtraction."""
    row_max = logits.max(axis=1, keepdims=True)
    shifted = np.exp(logits - row_max)
    sums = shifted.sum(axis=1, keepdims=True)
    lse = (row_max + np.log(sums))[:, 0]
    return shifted / sums, lse


def info_nce(q: FeatureBatch, k: FeatureBatch, tau: float = DEFAULT_TAU) -> float:
    """Mean InfoNCE loss with ``k[i]`` the positive for ``q[i]``.

    Every other key of the batch is a negative for ``q[i]``.

    Examples:
        Two orthonormal rows with ``q == k`` and ``tau = 1`` give
        ``log(1 + exp(-1))``.

    Raises:
        ShapeMismatchError: ``q`` and ``k`` differ in shape or ``n < 2``.
        BadTemperatureError: ``tau`` is not positive and finite.
    """
    _check_pair(q, k, tau)
    logits = _logits(q, k, tau)
    _, lse = _softmax_rows(logits)
    return float(np.mean(lse - np.diag(logits)))


def grad_info_nce(
    q: FeatureBatch, k: FeatureBatch, tau: float = DEFAULT_TAU
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Analytic gradient of ``info_nce`` with respect to the raw entries of ``q`` and ``k``.

    With ``P`` the row softmax of ``q k^T / tau``, the logit gradient is
    ``(P - I) / (n tau)``; normalization is treated as external.
    """
    _check_pair(q, k, tau)
    probs, _ = _softmax_rows(_logits(q, k, tau))
    dlogits = (probs - np.eye(q.n)) / (q.n * tau)
    return dlogits @ k.data, dlogits.T @ q.data


@dataclass(frozen=True)
class LossReport:
    """The four InfoNCE terms and their sums.

    ``cl1``/``cl2`` pair the base encoder with the momentum encoder across
    views; ``cl3``/``cl4`` compare the two views within one encoder.
    """

    cl1: float
    cl2: float
    cl3: float
    cl4: float
    cl_ori: float
    cl_aug: float
    total: float
    tau: float
    include_aug: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "cl1": self.cl1,
            "cl2": self.cl2,
            "cl3": self.cl3,
            "cl4": self.cl4,
            "cl_ori": self.cl_ori,
            "cl_aug": self.cl_aug,
            "total": self.total,
            "tau": self.tau,
            "include_aug": self.include_aug,
        }


def loss_report(
    f_m1: FeatureBatch,
    f_m2: FeatureBatch,
    f_b1: FeatureBatch,
    f_b2: FeatureBatch,
    tau: float = DEFAULT_TAU,
    include_aug: bool = True,
) -> LossReport:
    """Evaluate every contrastive term for one batch of two augmented views.

    Args:
        f_m1: Momentum-encoder features of view 1.
        f_m2: Momentum-encoder features of view 2.
        f_b1: Base-encoder features of view 1.
        f_b2: Base-encoder features of view 2.
        tau: Temperature.
        include_aug: Evaluate the within-encoder terms; when off they are 0.

    Relabeling the views (swapping both ``m1 <-> m2`` and ``b1 <-> b2``)
    swaps ``cl1`` and ``cl2`` and leaves ``cl_ori`` unchanged. The
    within-encoder terms use the view-1 side as queries, so ``cl_aug`` is
    only invariant under that relabeling when the batches are symmetric.
    """
    shapes = {b.shape for b in (f_m1, f_m2, f_b1, f_b2)}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"All four feature batches must share one shape, got {sorted(shapes)}")
    cl1 = info_nce(f_b2, f_m1, tau)
    cl2 = info_nce(f_b1, f_m2, tau)
    if include_aug:
        cl3 = info_nce(f_b1, f_b2, tau)
        cl4 = info_nce(f_m1, f_m2, tau)
    else:
        _check_pair(f_b1, f_b2, tau)
        cl3 = cl4 = 0.0
    cl_ori = cl1 + cl2
    cl_aug = cl3 + cl4
    return LossReport(
        cl1=cl1,
        cl2=cl2,
        cl3=cl3,
        cl4=cl4,
        cl_ori=cl_ori,
        cl_aug=cl_aug,
        total=cl_ori + cl_aug,
        tau=tau,
        include_aug=include_aug,
    )
