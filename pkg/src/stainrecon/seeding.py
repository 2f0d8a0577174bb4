"""Counter-based random streams keyed by (master_seed, patch_index, view_index)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1


@dataclass(frozen=True)
class AugmentationSeed:
    """Identifies the random stream of one augmented view.

    Two equal seeds always yield the same draws, whatever thread or order
    they are consumed in.
    """

    master_seed: int
    patch_index: int
    view_index: int

    def __post_init__(self) -> None:
        for name in ("patch_index", "view_index"):
            value = getattr(self, name)
            if not 0 <= value <= _MASK32:
                raise ValueError(f"{name} must be in [0, 2**32), got {value!r}")

    @property
    def key(self) -> int:
        """128-bit Philox key: master seed in the high word, patch and view below."""
        return ((self.master_seed & _MASK64) << 64) | (self.patch_index << 32) | self.view_index

    def generator(self) -> np.random.Generator:
        return make_generator(self)


def make_generator(seed: AugmentationSeed) -> np.random.Generator:
    """Fresh ``Generator`` over a Philox stream keyed by ``seed``.

    Philox is counter-based, so streams for different keys are independent
    and no state is shared between workers.
    """
    return np.random.Generator(np.random.Philox(key=seed.key))


def synth_generator(seed: int, *stream: int) -> np.random.Generator:
    """Generator for synthetic data; ``stream`` picks a sub-stream (slide, patch)."""
    words = [w & _MASK32 for w in stream[:2]]
    words += [0] * (2 - len(words))
    return make_generator(AugmentationSeed(seed, words[0], words[1]))
