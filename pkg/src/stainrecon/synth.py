"""Synthetic H&E-like patches with known basis and concentrations."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from stainrecon.basis import StainBasis
from stainrecon.errors import SaturationRiskError
from stainrecon.od import OD_MAX, od_to_rgb_array
from stainrecon.seeding import synth_generator
from stainrecon.separation import ConcentrationMap

# Repository fixture, not measured from any dataset: directions close to the
# commonly quoted H&E reference stain vectors, normalized.
REFERENCE_H = (0.5626, 0.7201, 0.4062)
REFERENCE_E = (0.2159, 0.8012, 0.5581)


@lru_cache(maxsize=None)
def reference_basis() -> StainBasis:
    """The fixed basis used by synthetic data and tests."""
    return StainBasis.from_stain_vectors(REFERENCE_H, REFERENCE_E)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not 0 <= self.lo <= self.hi:
            raise ValueError(f"Uniform needs 0 <= lo <= hi, got [{self.lo}, {self.hi}]")

    @property
    def upper(self) -> float:
        return self.hi

    def sample(self, rng: np.random.Generator, shape: tuple[int, ...]) -> NDArray[np.float64]:
        result: NDArray[np.float64] = self.lo + (self.hi - self.lo) * rng.random(shape)
        return result


@dataclass(frozen=True)
class Constant:
    value: float

    def __post_init__(self) -> None:
        if not self.value >= 0:
            raise ValueError(f"Constant value must be >= 0, got {self.value!r}")

    @property
    def upper(self) -> float:
        return self.value

    def sample(self, rng: np.random.Generator, shape: tuple[int, ...]) -> NDArray[np.float64]:
        # Consume the same randoms as Uniform so swapping distributions keeps streams aligned.
        rng.random(shape)
        return np.full(shape, self.value, dtype=np.float64)


Distribution = Union[Uniform, Constant]


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic patch.

    Attributes:
        basis: Stain basis the patch is mixed from.
        width: Patch width in pixels.
        height: Patch height in pixels.
        alpha_dist: Distribution of hematoxylin concentrations.
        beta_dist: Distribution of eosin concentrations.
        white_fraction: Expected fraction of unstained background pixels.
        residual_amplitude: Half-width of the uniform residual coefficient.
        seed: Seed of the patch's random stream.
        separate_fraction: Expected fraction of tissue pixels carrying only
            one stain (H or E with equal probability).
        stream: Sub-stream of ``seed``, e.g. ``(slide, patch)`` in a corpus.
    """

    basis: StainBasis
    width: int
    height: int
    alpha_dist: Distribution
    beta_dist: Distribution
    white_fraction: float = 0.0
    residual_amplitude: float = 0.0
    seed: int = 0
    separate_fraction: float = 0.0
    stream: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"Patch size must be positive, got {self.width}x{self.height}")
        if not 0.0 <= self.white_fraction <= 1.0:
            raise ValueError(f"white_fraction must be in [0, 1], got {self.white_fraction!r}")
        if not 0.0 <= self.separate_fraction <= 1.0:
            raise ValueError(
                f"separate_fraction must be in [0, 1], got {self.separate_fraction!r}"
            )
        if not self.residual_amplitude >= 0:
            raise ValueError(
                f"residual_amplitude must be >= 0, got {self.residual_amplitude!r}"
            )

    def max_od(self) -> NDArray[np.float64]:
        """Largest OD any pixel of this spec can reach, per channel."""
        h = self.alpha_dist.upper * np.asarray(self.basis.v_h)
        e = self.beta_dist.upper * np.asarray(self.basis.v_e)
        mixed = np.maximum(h, e) if self.separate_fraction == 1.0 else h + e
        result: NDArray[np.float64] = mixed + self.residual_amplitude * np.abs(self.basis.v_res)
        return result


def check_saturation(spec: SynthSpec) -> None:
    """Raise ``SaturationRiskError`` if any channel could pass ``OD_MAX``."""
    peak = spec.max_od()
    if float(peak.max()) > OD_MAX:
        raise SaturationRiskError(
            f"Spec can reach OD {float(peak.max()):.3f} on channel {int(peak.argmax())}, "
            f"above the 8-bit limit {OD_MAX:.3f}; lower the concentration bounds"
        )


def generate_concentrations(spec: SynthSpec) -> ConcentrationMap:
    """Exact per-pixel ``(alpha, beta, gamma)`` for the spec, before any rendering."""
    check_saturation(spec)
    rng = synth_generator(spec.seed, *spec.stream)
    shape = (spec.height, spec.width)
    white = rng.random(shape) < spec.white_fraction
    alpha = spec.alpha_dist.sample(rng, shape)
    beta = spec.beta_dist.sample(rng, shape)
    single = rng.random(shape) < spec.separate_fraction
    h_only = rng.random(shape) < 0.5
    gamma = spec.residual_amplitude * (2.0 * rng.random(shape) - 1.0)

    beta[single & h_only] = 0.0
    alpha[single & ~h_only] = 0.0
    for plane in (alpha, beta, gamma):
        plane[white] = 0.0
    return ConcentrationMap.from_array(np.stack([alpha, beta, gamma], axis=-1))


def render_concentrations(
    concentration_map: ConcentrationMap, basis: StainBasis
) -> NDArray[np.uint8]:
    """Mix concentrations (residual included, no clamping of coefficients) into RGB."""
    od = concentration_map.data.reshape(-1, 3) @ basis.matrix.T
    return od_to_rgb_array(od.reshape(concentration_map.data.shape))


def generate_patch(spec: SynthSpec) -> tuple[NDArray[np.uint8], ConcentrationMap]:
    """Render a synthetic patch and return it with its pre-quantization ground truth.

    Raises:
        SaturationRiskError: The spec could produce OD above ``OD_MAX``.
    """
    truth = generate_concentrations(spec)
    return render_concentrations(truth, spec.basis), truth


def quantization_bound(image: ArrayLike, basis: StainBasis) -> NDArray[np.float64]:
    """Per-pixel worst-case ``(alpha, beta, gamma)`` error caused by 8-bit rounding.

    An observed intensity ``i`` comes from a true intensity in
    ``[i - 0.5, i + 0.5)``, so each OD channel is off by at most
    ``log10(i / (i - 0.5))``; that error vector is pushed through
    ``|inverse|``. Pixels with a zero channel have an infinite bound.
    """
    rgb = np.asarray(image, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ValueError(f"Image must have a trailing axis of 3, got {rgb.shape}")
    with np.errstate(divide="ignore"):
        od_error = np.where(rgb >= 1.0, np.log10(rgb / np.maximum(rgb - 0.5, 0.5)), np.inf)
    result: NDArray[np.float64] = od_error @ np.abs(basis.inverse).T
    return result
