"""Deterministic JSON and CSV serialisation.

Every numeric artifact is written with 17 significant digits so that a float64
round-trips exactly and repeated runs produce byte-identical files.
"""

import json
import math
from pathlib import Path


def format_float(x: float) -> str:
    """Render a float with 17 significant digits (exact float64 round-trip)."""
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close_pad = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [_encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(pad + s for s in items) + "\n" + close_pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for key in sorted(obj):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {type(key).__name__}")
            items.append(pad + json.dumps(key, ensure_ascii=False) + ": "
                         + _encode(obj[key], indent, level + 1))
        return "{\n" + ",\n".join(items) + "\n" + close_pad + "}"
    # numpy scalars and arrays arrive via .item() / .tolist() upstream; anything
    # else here is a bug in the caller.
    if hasattr(obj, "item") and not hasattr(obj, "__len__"):
        return _encode(obj.item(), indent, level)
    if hasattr(obj, "tolist"):
        return _encode(obj.tolist(), indent, level)
    raise TypeError(f"not JSON-serialisable: {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Canonical JSON: sorted keys, fixed float formatting, trailing newline."""
    return _encode(obj, indent, 0) + "\n"


def dump(obj, path) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def load(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def loads(text: str):
    return json.loads(text)
