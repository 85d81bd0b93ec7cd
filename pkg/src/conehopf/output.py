"""Deterministic CSV/JSON emission: fixed float format, stable key order."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def fmt(value) -> str:
    """Render a cell: floats at 17 significant digits, '.' decimal, no locale."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def config_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()[:16]


def rows_to_csv(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(cell) for cell in row) for row in rows)
    return "\n".join(lines) + "\n"


def records_to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_text(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8", newline="\n")
