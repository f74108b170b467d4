"""CSV output with a leading provenance comment and stable float text."""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(value) -> str:
    """Text for one cell: floats round-trip via ``repr``-precision ``%.17g``."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if value is None:
        return ""
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comment: str | None = None) -> Path:
    """Write ``rows`` under ``header``; ``comment`` becomes a ``# ...`` first line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Return ``(comments, rows)`` of a file written by :func:`write_csv`."""
    comments, body = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            else:
                body.append(line)
    return comments, list(csv.DictReader(body))


def fresh_path(path, overwrite: bool = False) -> Path:
    """``path`` itself if free (or ``overwrite``), else the first free ``stem-N.ext``."""
    path = Path(path)
    if overwrite or not path.exists():
        return path
    n = 1
    while True:
        cand = path.with_name(f"{path.stem}-{n}{path.suffix}")
        if not cand.exists():
            return cand
        n += 1


def default_out_dir() -> Path:
    return Path(os.environ.get("JQLAB_OUT", "jqlab-out"))
