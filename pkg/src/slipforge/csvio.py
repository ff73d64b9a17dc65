"""CSV reading and writing with round-trip float formatting."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from slipforge.errors import ConfigError


def fmt(value) -> str:
    """Floats with 17 significant digits, everything else via ``str``."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_rows(path, header, rows) -> None:
    """Write dict or sequence rows under ``header``; missing dict keys become empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                w.writerow(["" if row.get(k) is None else fmt(row.get(k)) for k in header])
            else:
                w.writerow([fmt(v) for v in row])


def read_table(path, required=()) -> dict[str, np.ndarray]:
    """Read a numeric CSV into a column dict.

    Blank cells read as NaN; optional columns that are not numeric are dropped.

    Raises:
        ConfigError: if the file is empty, ragged, non-numeric in a required
            column, or lacks a required column.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ConfigError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}")
    missing = [c for c in required if c not in header]
    if missing:
        raise ConfigError(f"{path}: missing columns {', '.join(missing)}")
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        try:
            out[name] = np.array([float(v) if v.strip() else np.nan for v in col], dtype=float)
        except ValueError as exc:
            if name in required:
                raise ConfigError(f"{path}: column {name} is not numeric") from exc
    return out
