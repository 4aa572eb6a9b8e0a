"""CSV ingestion of observation batches."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class CsvData:
    values: np.ndarray
    n_rows: int
    n_cols: int
    header: tuple | None = None


def _parse_row(row, lineno):
    out = []
    for cell in row:
        cell = cell.strip()
        try:
            v = float(cell)
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric value {cell!r}") from None
        if not np.isfinite(v):
            raise ValueError(f"line {lineno}: non-finite value {cell!r}")
        out.append(v)
    return out


def ingest_csv(path) -> CsvData:
    """Read one observation per row; a non-numeric first row is taken as header.

    One-column files yield a 1-d array, otherwise shape ``(n_rows, n_cols)``.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [(k + 1, r) for k, r in enumerate(csv.reader(fh)) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = None
    first_line, first = rows[0]
    try:
        _parse_row(first, first_line)
    except ValueError:
        header = tuple(c.strip() for c in first)
        log.info("%s: skipping header row %s", path, header)
        rows = rows[1:]
        if not rows:
            raise ValueError(f"{path}: header only, no data rows")
    data = []
    width = None
    for lineno, r in rows:
        vals = _parse_row(r, lineno)
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ValueError(f"line {lineno}: expected {width} columns, got {len(vals)}")
        data.append(vals)
    arr = np.asarray(data, dtype=float)
    if width == 1:
        arr = arr[:, 0]
    log.info("%s: %d rows, %d columns", path, len(data), width)
    return CsvData(arr, len(data), width, header)
