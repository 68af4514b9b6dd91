"""Result containers and their CSV/JSON serialization."""
from __future__ import annotations

from dataclasses import dataclass, field
import csv
import io
import json
import math
from pathlib import Path
from typing import Any

import numpy as np


def fmt_float(x) -> str:
    """17-significant-digit decimal, the CSV float format used throughout."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    """UTF-8 JSON with sorted keys; non-finite floats become strings."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


@dataclass
class BoundReport:
    """Empirical constants and verdict for one estimate.

    ``rows`` holds every sampled point (one tuple per row, ordered like
    ``columns``) so a verdict can be reproduced from the CSV alone.
    """

    name: str
    constants: dict[str, float] = field(default_factory=dict)
    witnesses: dict[str, dict[str, Any]] = field(default_factory=dict)
    exponents: dict[str, float] = field(default_factory=dict)
    residuals: dict[str, float] = field(default_factory=dict)
    verdict: bool | None = None
    drift: float | None = None
    n_failed: int = 0
    notes: list[str] = field(default_factory=list)
    columns: tuple[str, ...] = ()
    rows: list[tuple] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "constants": self.constants,
            "witnesses": self.witnesses,
            "exponents": self.exponents,
            "residuals": self.residuals,
            "verdict": self.verdict,
            "drift": self.drift,
            "n_failed": self.n_failed,
            "notes": list(self.notes),
            "n_rows": len(self.rows),
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    def to_csv(self) -> str:
        return csv_text(self.columns, self.rows)

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")
