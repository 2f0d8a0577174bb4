"""Number formatting and the deterministic JSON writer used for every text output."""

from __future__ import annotations

import json
import math
from typing import Any, Mapping


def format_real(value: float) -> str:
    """Format a real with 17 significant digits, enough to round-trip a float64.

    Negative zero is written as ``0``.

    Raises:
        ValueError: If the value is NaN or infinite.

    Examples:
        >>> format_real(0.1)
        '0.10000000000000001'
        >>> format_real(-0.0)
        '0'
        >>> format_real(2.0)
        '2'
    """
    num = float(value)
    if not math.isfinite(num):
        raise ValueError(f"Cannot write non-finite real {num!r}")
    if num == 0.0:
        return "0"
    return f"{num:.17g}"


def _format_scalar(value: Any) -> str:
    if value is True:
        return "true"
    if value is False:
        return "false"
    if value is None:
        return "null"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_real(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    # numpy scalars
    if hasattr(value, "item"):
        return _format_scalar(value.item())
    raise TypeError(f"Cannot write value of type {type(value).__name__} as JSON")


def _is_flat_list(value: Any) -> bool:
    return isinstance(value, (list, tuple)) and all(
        not isinstance(v, (list, tuple, dict)) for v in value
    )


def indent(text: str, spaces: int = 2) -> str:
    """Indent each non-empty line of text."""
    prefix = " " * spaces
    return "\n".join(prefix + line if line else line for line in text.split("\n"))


def format_json(value: Any) -> str:
    """Serialize nested dicts/lists deterministically.

    Keys keep their insertion order, reals use ``format_real`` and flat lists
    stay on one line, so equal inputs always give byte-identical text.

    Examples:
        >>> print(format_json({"v_h": [1.0, 0.0, 0.0], "n": 3}))
        {
          "v_h": [1, 0, 0],
          "n": 3
        }
    """
    if isinstance(value, Mapping):
        if not value:
            return "{}"
        items = [
            f"{json.dumps(str(k), ensure_ascii=False)}: {format_json(v)}" for k, v in value.items()
        ]
        return "{\n" + indent(",\n".join(items)) + "\n}"
    if _is_flat_list(value):
        return "[" + ", ".join(_format_scalar(v) for v in value) + "]"
    if isinstance(value, (list, tuple)):
        return "[\n" + indent(",\n".join(format_json(v) for v in value)) + "\n]"
    return _format_scalar(value)
