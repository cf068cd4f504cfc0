"""Deterministic JSON writing: floats at 9 significant digits, stable layout."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def _render(obj) -> str:
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}: {_render(v)}" for k, v in obj.items())
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple)) or isinstance(obj, np.ndarray):
        return "[" + ", ".join(_render(v) for v in obj) + "]"
    if isinstance(obj, bool) or isinstance(obj, np.bool_):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"json dump: non-finite float {x}")
        return format(x, ".9g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    raise TypeError(f"json dump: unsupported type {type(obj)}")


def dumps(obj) -> str:
    return _render(obj)


def dump(obj, path: str | Path) -> None:
    Path(path).write_text(_render(obj) + "\n", encoding="utf-8")


def load(path: str | Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
