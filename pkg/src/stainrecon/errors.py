"""Exception hierarchy for stainrecon."""

from __future__ import annotations


class StainReconError(Exception):
    """Base class for every error raised by stainrecon."""


class NoTissueError(StainReconError, ValueError):
    """Too few tissue pixels survived the tissue filter."""


class DegeneratePlaneError(StainReconError, ValueError):
    """The tissue OD cloud does not span a plane (single stain or monochrome)."""


class IllConditionedError(StainReconError, ValueError):
    """A stain basis matrix is too close to singular to invert reliably."""


class ZeroVectorError(StainReconError, ValueError):
    """A direction vector has zero length."""


class ZeroRowError(StainReconError, ValueError):
    """A feature row has zero norm and cannot be normalized."""


class ShapeMismatchError(StainReconError, ValueError):
    """Two inputs that must agree in shape do not."""


class BadTemperatureError(StainReconError, ValueError):
    """A contrastive temperature is not a positive finite number."""


class EmptyHistogramError(StainReconError, ValueError):
    """A percentile was requested from a histogram holding no values."""


class SlideMismatchError(StainReconError, ValueError):
    """A patch was paired with statistics from another slide."""


class SaturationRiskError(StainReconError, ValueError):
    """A synthetic spec would push OD past the 8-bit saturation limit."""


class DuplicatePathError(StainReconError, ValueError):
    """A manifest lists the same patch path (or output stem) twice."""


class MissingSlideStatsError(StainReconError, KeyError):
    """A slide id has no entry in the stats document."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable.
        return str(self.args[0]) if self.args else ""


class ManifestParseError(StainReconError, ValueError):
    """A manifest CSV could not be parsed.

    Attributes:
        line: 1-based line number of the offending row (1 for the header).
    """

    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class FormatError(StainReconError, ValueError):
    """A binary file is truncated or internally inconsistent.

    Attributes:
        offset: Byte offset at which reading failed.
    """

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


class BadMagicError(FormatError):
    """A binary file does not start with the expected magic bytes."""


class AllSlidesFailedError(StainReconError, RuntimeError):
    """Every slide of a batch failed; there is nothing to write."""
