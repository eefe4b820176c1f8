"""Keyed result tables serialisable to CSV and JSON."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

from . import __version__


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return f"{v:.17g}"
    if v is None:
        return ""
    return str(v)


def _jsonable(v: Any) -> Any:
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if hasattr(v, "item"):
        return _jsonable(v.item())
    return v


@dataclass
class SweepReport:
    """Rows of ``{column: value}`` sorted by ``key`` with a fixed schema."""

    name: str
    columns: Sequence[str]
    key: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    provenance: Dict[str, Any] = field(default_factory=dict)

    def add(self, **row) -> None:
        missing = set(self.columns) - set(row)
        extra = set(row) - set(self.columns)
        if missing or extra:
            raise KeyError(f"row does not match schema (missing {sorted(missing)}, extra {sorted(extra)})")
        self.rows.append({c: _jsonable(row[c]) for c in self.columns})
        self.rows.sort(key=lambda r: r[self.key])

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([format_value(r[c]) for c in self.columns])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None) -> str:
        doc = {
            "name": self.name,
            "columns": list(self.columns),
            "records": self.rows,
            "provenance": {"version": f"v{__version__}", **self.provenance},
        }
        text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text
