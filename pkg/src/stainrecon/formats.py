"""On-disk formats: PNG patches, SRAF feature and SRAM plane binaries, stats JSON and CSV logs."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from PIL import Image

from stainrecon.basis import BasisConfig
from stainrecon.contrastive import FeatureBatch
from stainrecon.errors import BadMagicError, FormatError, MissingSlideStatsError
from stainrecon.slide_stats import SlideStainStats, StainHistogram
from stainrecon.utils import format_json, format_real

PathLike = Union[str, Path]

FEATURE_MAGIC = b"SRAF"
PLANE_MAGIC = b"SRAM"
_HEADER = struct.Struct("<4sII")
ERRORS_KEY = "_errors"


# --- images -----------------------------------------------------------------


def read_rgb(path: PathLike) -> NDArray[np.uint8]:
    """Load an image file as an ``(H, W, 3)`` uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def write_png(path: PathLike, image: ArrayLike) -> None:
    """Write an RGB ``(H, W, 3)`` or grayscale ``(H, W)`` uint8 array as PNG."""
    arr = np.ascontiguousarray(np.asarray(image, dtype=np.uint8))
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ValueError(f"Expected an (H, W) or (H, W, 3) image, got shape {arr.shape}")
    Image.fromarray(arr).save(path, format="PNG")


# --- binary matrices --------------------------------------------------------


def _encode_matrix(magic: bytes, matrix: ArrayLike) -> bytes:
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ValueError(f"Expected a 2-D matrix, got shape {arr.shape}")
    rows, cols = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return _HEADER.pack(magic, rows, cols) + payload


def _decode_matrix(magic: bytes, data: bytes) -> NDArray[np.float32]:
    if data[: len(magic)] != magic:
        raise BadMagicError(
            f"Expected magic {magic!r}, found {data[: len(magic)]!r}", offset=0
        )
    if len(data) < _HEADER.size:
        raise FormatError(
            f"Header needs {_HEADER.size} bytes, file has {len(data)}", offset=len(data)
        )
    _, rows, cols = _HEADER.unpack_from(data)
    expected = _HEADER.size + 4 * rows * cols
    if len(data) < expected:
        raise FormatError(
            f"Payload truncated: {rows}x{cols} floats need {expected} bytes, file has {len(data)}",
            offset=len(data),
        )
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes after payload", offset=expected)
    values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=_HEADER.size)
    return values.reshape(rows, cols).astype(np.float32)


def encode_features(batch: FeatureBatch) -> bytes:
    return _encode_matrix(FEATURE_MAGIC, batch.data)


def decode_features(data: bytes) -> FeatureBatch:
    """Parse an SRAF buffer.

    Raises:
        BadMagicError: The buffer does not start with ``SRAF``.
        FormatError: Header or payload is truncated, or bytes trail the payload.
    """
    return FeatureBatch.from_array(_decode_matrix(FEATURE_MAGIC, data))


def write_features(path: PathLike, batch: FeatureBatch) -> None:
    Path(path).write_bytes(encode_features(batch))


def read_features(path: PathLike) -> FeatureBatch:
    return decode_features(Path(path).read_bytes())


def encode_plane(plane: ArrayLike) -> bytes:
    return _encode_matrix(PLANE_MAGIC, plane)


def decode_plane(data: bytes) -> NDArray[np.float32]:
    """Parse an SRAM buffer into a ``(height, width)`` float32 array."""
    return _decode_matrix(PLANE_MAGIC, data)


def write_plane(path: PathLike, plane: ArrayLike) -> None:
    Path(path).write_bytes(encode_plane(plane))


def read_plane(path: PathLike) -> NDArray[np.float32]:
    return decode_plane(Path(path).read_bytes())


# --- stats JSON -------------------------------------------------------------


@dataclass(frozen=True)
class StatsDocument:
    """Parsed stats JSON: per-slide stats plus the slides that failed."""

    slides: dict[str, SlideStainStats] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def for_slide(self, slide_id: str) -> SlideStainStats:
        try:
            return self.slides[slide_id]
        except KeyError:
            raise MissingSlideStatsError(f"No stats for slide {slide_id!r}") from None

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {sid: self.slides[sid].to_dict() for sid in sorted(self.slides)}
        if self.errors:
            doc[ERRORS_KEY] = {sid: self.errors[sid] for sid in sorted(self.errors)}
        return doc


def dumps_stats(document: StatsDocument) -> str:
    """Stats JSON text: slides sorted by id, then ``_errors`` when any slide failed."""
    return format_json(document.to_dict()) + "\n"


def write_stats(path: PathLike, document: StatsDocument) -> None:
    Path(path).write_text(dumps_stats(document), encoding="utf-8")


def loads_stats(text: str, cfg: BasisConfig | None = None) -> StatsDocument:
    """Parse stats JSON; slides backed by fewer than ``cfg.min_tissue_pixels`` are rejected."""
    raw = json.loads(text)
    if not isinstance(raw, dict):
        raise ValueError("Stats JSON must be an object keyed by slide id")
    errors = {str(k): str(v) for k, v in raw.pop(ERRORS_KEY, {}).items()}
    slides = {sid: SlideStainStats.from_dict(sid, entry, cfg) for sid, entry in raw.items()}
    return StatsDocument(slides=slides, errors=errors)


def read_stats(path: PathLike, cfg: BasisConfig | None = None) -> StatsDocument:
    return loads_stats(Path(path).read_text(encoding="utf-8"), cfg)


# --- CSV ----------------------------------------------------------------------


def _csv_cell(value: Any) -> str:
    if isinstance(value, float):
        return format_real(value)
    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """Write a header and rows, reals at full precision. Returns the row count."""
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])
            count += 1
    return count


SRA_LOG_HEADER = ("patch_path", "view_index", "coef_h", "coef_e", "dropped_channel")
TSA_LOG_HEADER = ("patch_path", "view_index", "scale_h", "bias_h", "scale_e", "bias_e")


def read_csv_rows(path: PathLike) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def histogram_rows(
    alpha: StainHistogram, beta: StainHistogram
) -> Iterable[tuple[float, float, int, int]]:
    """``(bin_lo, bin_hi, alpha_count, beta_count)`` for every bin."""
    if not alpha.same_shape(beta):
        raise ValueError("alpha and beta histograms must share bins")
    edges = alpha.edges()
    for i in range(alpha.bin_count):
        yield float(edges[i]), float(edges[i + 1]), int(alpha.counts[i]), int(beta.counts[i])


HISTOGRAM_HEADER = ("bin_lo", "bin_hi", "alpha_count", "beta_count")
STRENGTHS_HEADER = ("slide_id", "h_max", "e_max", "n_tissue_pixels")


def strength_rows(stats: Mapping[str, SlideStainStats]) -> Iterable[tuple[str, float, float, int]]:
    for sid in sorted(stats):
        s = stats[sid]
        yield sid, s.h_max, s.e_max, s.n_tissue_pixels
