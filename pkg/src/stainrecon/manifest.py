"""Patch manifest: a CSV of ``patch_path,slide_id`` rows."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Union

from stainrecon.errors import DuplicatePathError, ManifestParseError

PathLike = Union[str, Path]
HEADER = ("patch_path", "slide_id")
RESERVED_SLIDE_IDS = frozenset({"_errors"})


@dataclass(frozen=True)
class ManifestEntry:
    patch_path: str
    slide_id: str


@dataclass(frozen=True)
class Manifest:
    """Ordered, duplicate-free list of patches and the slide each belongs to.

    Relative patch paths resolve against ``root`` (the manifest's directory).
    """

    entries: tuple[ManifestEntry, ...] = ()
    root: Path = Path(".")

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for entry in self.entries:
            if entry.patch_path in seen:
                raise DuplicatePathError(f"Patch path {entry.patch_path!r} listed twice")
            seen.add(entry.patch_path)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        path = Path(entry.patch_path)
        return path if path.is_absolute() else self.root / path

    def slide_ids(self) -> list[str]:
        """Slide ids in order of first appearance."""
        return list(dict.fromkeys(e.slide_id for e in self.entries))

    def by_slide(self) -> dict[str, list[tuple[int, ManifestEntry]]]:
        """``(manifest index, entry)`` pairs grouped by slide, manifest order kept."""
        groups: dict[str, list[tuple[int, ManifestEntry]]] = {}
        for index, entry in enumerate(self.entries):
            groups.setdefault(entry.slide_id, []).append((index, entry))
        return groups


def parse_manifest(lines: Iterable[str], root: PathLike = ".") -> Manifest:
    """Parse manifest CSV text.

    Raises:
        ManifestParseError: Bad header, wrong column count, empty field or a
            reserved slide id; ``line`` is the 1-based line number.
        DuplicatePathError: A patch path appears twice.
    """
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != HEADER:
        raise ManifestParseError(f"Expected header {','.join(HEADER)!r}, got {header!r}", line=1)

    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 2:
            raise ManifestParseError(f"Expected 2 fields, got {len(row)}", line=line)
        path, slide_id = row[0].strip(), row[1].strip()
        if not path or not slide_id:
            raise ManifestParseError("patch_path and slide_id must be non-empty", line=line)
        if slide_id in RESERVED_SLIDE_IDS:
            raise ManifestParseError(f"Slide id {slide_id!r} is reserved", line=line)
        if path in seen:
            raise DuplicatePathError(
                f"line {line}: patch path {path!r} already listed on line {seen[path]}"
            )
        seen[path] = line
        entries.append(ManifestEntry(path, slide_id))
    return Manifest(entries=tuple(entries), root=Path(root))


def load_manifest(path: PathLike) -> Manifest:
    """Read a manifest file; relative patch paths resolve against its directory."""
    manifest_path = Path(path)
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        return parse_manifest(fh, root=manifest_path.parent)


def write_manifest(path: PathLike, entries: Iterable[ManifestEntry]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for entry in entries:
            writer.writerow([entry.patch_path, entry.slide_id])
