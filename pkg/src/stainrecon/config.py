"""Layered settings: command-line flag, then config file, then built-in default.

The config file is a JSON document whose sections mirror the flags, e.g.::

    {"sra": {"preset": "wide", "p_drop": 0.05}, "run": {"workers": 8}}

Every setting is an ``Option`` naming its dotted path in that document; paths
are looked up with glom.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Union

import glom  # type: ignore[import-untyped]

from stainrecon.augment import SRA_PRESETS, SraConfig, TsaConfig
from stainrecon.basis import BasisConfig

PathLike = Union[str, Path]


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


_KIND_CHECKS: dict[str, tuple[Callable[[Any], bool], str]] = {
    "number": (_is_number, "a number"),
    "integer": (lambda v: isinstance(v, int) and not isinstance(v, bool), "an integer"),
    "range": (
        lambda v: isinstance(v, (list, tuple)) and len(v) == 2 and all(_is_number(x) for x in v),
        "a [lo, hi] pair of numbers",
    ),
    "boolean": (lambda v: isinstance(v, bool), "true or false"),
    "string": (lambda v: isinstance(v, str), "a string"),
}


@dataclass(frozen=True)
class Option:
    """One setting, located by a glom dotted path.

    Examples:
        `Option("run.workers", 1, "integer")` -> `doc["run"]["workers"]`, else 1
    """

    path: str
    default: Any = field(default=None)
    kind: str = "number"

    def resolve(self, data: Any, override: Any = None) -> Any:
        """Flag value if given, else the document value, else the default."""
        if override is not None:
            return override
        try:
            return glom.glom(data, self.path)
        except glom.PathAccessError:
            return self.default

    def check(self, value: Any) -> None:
        """Raise ``ValueError`` if a config file value has the wrong type."""
        accepts, expected = _KIND_CHECKS[self.kind]
        if not accepts(value):
            raise ValueError(f"Config value {self.path} must be {expected}, got {value!r}")

    def __repr__(self) -> str:
        return f'Option("{self.path}", default={self.default!r})'


OPTIONS: tuple[Option, ...] = (
    Option("basis.tissue_od_threshold", 0.15),
    Option("basis.angle_percentile", 1.0),
    Option("basis.min_tissue_pixels", 1000, "integer"),
    Option("stats.bin_count", 8192, "integer"),
    Option("stats.percentile", 99.0),
    Option("stats.coverage", 1.0),
    Option("sra.preset", "narrow", "string"),
    Option("sra.h_range", kind="range"),
    Option("sra.e_range", kind="range"),
    Option("sra.p_drop"),
    Option("sra.include_residual", kind="boolean"),
    Option("sra.drop_h_probability"),
    Option("sra.shared_views", kind="boolean"),
    Option("tsa.scale_halfwidth", 0.05),
    Option("tsa.bias_halfwidth", 0.05),
    Option("tsa.include_residual", False, "boolean"),
    Option("loss.tau", 0.2),
    Option("loss.include_aug", True, "boolean"),
    Option("run.workers", 1, "integer"),
    Option("run.seed", 0, "integer"),
    Option("run.out", "out", "string"),
    Option("run.views_per_patch", 2, "integer"),
    Option("synth.slides", 2, "integer"),
    Option("synth.patches_per_slide", 4, "integer"),
    Option("synth.size", 400, "integer"),
    Option("synth.h_strength", [0.6, 1.2], "range"),
    Option("synth.e_strength", [0.4, 0.9], "range"),
    Option("synth.white_fraction", 0.3),
    Option("synth.separate_fraction", 0.5),
    Option("synth.residual_amplitude", 0.0),
)

OPTION_PATHS = {opt.path: opt for opt in OPTIONS}
SECTIONS = frozenset(path.split(".", 1)[0] for path in OPTION_PATHS)


def validate_document(doc: Mapping[str, Any]) -> None:
    """Reject unknown sections and keys, and values of the wrong type, naming them."""
    unknown_sections = sorted(set(doc) - SECTIONS)
    if unknown_sections:
        raise ValueError(
            f"Unknown config sections {unknown_sections}; expected a subset of {sorted(SECTIONS)}"
        )
    for section, body in doc.items():
        if not isinstance(body, Mapping):
            raise ValueError(f"Config section {section!r} must be an object")
        unknown = sorted(f"{section}.{key}" for key in body if f"{section}.{key}" not in OPTION_PATHS)
        if unknown:
            raise ValueError(f"Unknown config keys {unknown}")
        for key, value in body.items():
            OPTION_PATHS[f"{section}.{key}"].check(value)


def load_config(path: PathLike | None) -> dict[str, Any]:
    """Read and validate a config file; ``None`` gives an empty document."""
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"Config file {path} must hold a JSON object")
    validate_document(doc)
    return doc


class Settings:
    """Resolved view over a config document plus explicit flag overrides."""

    def __init__(self, doc: Mapping[str, Any] | None = None, overrides: Mapping[str, Any] | None = None):
        self.doc: Mapping[str, Any] = doc or {}
        self.overrides: dict[str, Any] = {k: v for k, v in (overrides or {}).items() if v is not None}
        unknown = sorted(set(self.overrides) - set(OPTION_PATHS))
        if unknown:
            raise ValueError(f"Unknown settings {unknown}")

    def get(self, path: str) -> Any:
        return OPTION_PATHS[path].resolve(self.doc, self.overrides.get(path))

    def basis_config(self) -> BasisConfig:
        return BasisConfig(
            tissue_od_threshold=float(self.get("basis.tissue_od_threshold")),
            angle_percentile=float(self.get("basis.angle_percentile")),
            min_tissue_pixels=int(self.get("basis.min_tissue_pixels")),
        )

    def sra_config(self) -> SraConfig:
        """Preset first, then any explicitly set field on top of it."""
        preset = str(self.get("sra.preset"))
        if preset not in SRA_PRESETS:
            raise ValueError(f"Unknown SRA preset {preset!r}; choose from {sorted(SRA_PRESETS)}")
        changes: dict[str, Any] = {}
        for name in ("h_range", "e_range"):
            value = self.get(f"sra.{name}")
            if value is not None:
                changes[name] = tuple(float(v) for v in value)
        for name in ("p_drop", "drop_h_probability"):
            value = self.get(f"sra.{name}")
            if value is not None:
                changes[name] = float(value)
        for name in ("include_residual", "shared_views"):
            value = self.get(f"sra.{name}")
            if value is not None:
                changes[name] = bool(value)
        return replace(SRA_PRESETS[preset], **changes)

    def tsa_config(self) -> TsaConfig:
        return TsaConfig(
            scale_halfwidth=float(self.get("tsa.scale_halfwidth")),
            bias_halfwidth=float(self.get("tsa.bias_halfwidth")),
            include_residual=bool(self.get("tsa.include_residual")),
        )
