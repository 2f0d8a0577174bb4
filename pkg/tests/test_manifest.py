"""Tests for manifest parsing."""

import os
import tempfile
from pathlib import Path

import pytest
from stainrecon.errors import DuplicatePathError, ManifestParseError
from stainrecon.manifest import (
    Manifest,
    ManifestEntry,
    load_manifest,
    parse_manifest,
    write_manifest,
)


def _lines(text):
    return text.splitlines(keepends=True)


class TestParseManifest:
    def test_basic(self):
        manifest = parse_manifest(_lines("patch_path,slide_id\na.png,s1\nb.png,s2\nc.png,s1\n"))
        assert len(manifest) == 3
        assert manifest.slide_ids() == ["s1", "s2"]
        assert [i for i, _ in manifest.by_slide()["s1"]] == [0, 2]

    def test_blank_rows_skipped(self):
        manifest = parse_manifest(_lines("patch_path,slide_id\n\na.png,s1\n,\n"))
        assert [e.patch_path for e in manifest] == ["a.png"]

    def test_bad_header(self):
        with pytest.raises(ManifestParseError, match="line 1") as excinfo:
            parse_manifest(_lines("path,slide\na.png,s1\n"))
        assert excinfo.value.line == 1

    def test_empty_file(self):
        with pytest.raises(ManifestParseError):
            parse_manifest([])

    def test_wrong_field_count(self):
        with pytest.raises(ManifestParseError) as excinfo:
            parse_manifest(_lines("patch_path,slide_id\na.png,s1\nb.png,s2,extra\n"))
        assert excinfo.value.line == 3

    def test_empty_field(self):
        with pytest.raises(ManifestParseError, match="non-empty"):
            parse_manifest(_lines("patch_path,slide_id\na.png,\n"))

    def test_reserved_slide_id(self):
        with pytest.raises(ManifestParseError, match="reserved"):
            parse_manifest(_lines("patch_path,slide_id\na.png,_errors\n"))

    def test_duplicate_path(self):
        with pytest.raises(DuplicatePathError, match="line 3"):
            parse_manifest(_lines("patch_path,slide_id\na.png,s1\na.png,s2\n"))

    def test_quoted_fields(self):
        manifest = parse_manifest(_lines('patch_path,slide_id\n"dir, with comma/a.png",s1\n'))
        assert manifest.entries[0].patch_path == "dir, with comma/a.png"


class TestManifest:
    def test_duplicates_rejected_on_construction(self):
        entry = ManifestEntry("a.png", "s1")
        with pytest.raises(DuplicatePathError):
            Manifest(entries=(entry, entry))

    def test_resolve(self):
        manifest = Manifest(entries=(ManifestEntry("x/a.png", "s"),), root=Path("/data"))
        assert manifest.resolve(manifest.entries[0]) == Path("/data/x/a.png")

    def test_absolute_paths_kept(self):
        entry = ManifestEntry("/abs/a.png", "s")
        assert Manifest(entries=(entry,), root=Path("/data")).resolve(entry) == Path("/abs/a.png")


class TestLoadManifest:
    def test_write_then_load(self):
        entries = [ManifestEntry("p/a.png", "s1"), ManifestEntry("p/b.png", "s2")]
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "manifest.csv")
            write_manifest(path, entries)
            manifest = load_manifest(path)
        assert list(manifest) == entries
        assert manifest.root == Path(tmpdir)
