"""Canonical JSON serialization shared by the CLI, the HTTP service, and
snapshot files.

Two rules make outputs reproducible byte-for-byte:
  * floats are rounded to 9 significant digits before encoding, so a
    dump -> load -> dump cycle reproduces the same bytes;
  * encoding is compact (no whitespace) with keys left in insertion order,
    which every producer builds deterministically.
"""

from __future__ import annotations

import json
import math
from typing import Any

SCHEMA_VERSION = 1


def round9(x: float) -> float:
    """Round to 9 significant decimal digits (idempotent under re-parsing)."""
    if x == 0 or not math.isfinite(x):
        return x
    return float(f"{x:.9g}")


def _walk(obj: Any) -> Any:
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            raise ValueError("NaN is not serializable")
        return round9(obj)
    if isinstance(obj, dict):
        return {k: _walk(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_walk(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes, bool, int)):
        # numpy scalar
        return _walk(obj.item())
    return obj


def canonical_dumps(obj: Any) -> str:
    """Compact, reproducible JSON text for `obj`."""
    return json.dumps(_walk(obj), separators=(",", ":"), allow_nan=False)


def canonical_dump_bytes(obj: Any) -> bytes:
    return canonical_dumps(obj).encode("utf-8")


def parse_float(value: Any) -> float:
    """Inverse of the float encoding above ("inf"/"-inf" strings allowed)."""
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    return float(value)


def write_json(path, obj: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_dumps(obj))


def read_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
