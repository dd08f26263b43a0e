"""Score traces on disk.

Format: CSV with header ``step,score_0,...,score_{m-1}`` and one row per
token, rows grouped by ascending step.  Multi-layer traces use one file per
layer named ``<stem>_layer<i>.csv``.  Floats are written with ``repr`` so a
write/read round trip is exact.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable
from pathlib import Path

import numpy as np


class TraceError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def write_trace(path, stream: Iterable) -> None:
    """Write ``stream``, an iterable of (step, matrix) pairs or bare matrices."""
    path = Path(path)
    items = []
    for idx, item in enumerate(stream):
        if isinstance(item, tuple):
            step, mat = item
        else:
            step, mat = idx + 1, item
        items.append((int(step), np.asarray(mat, dtype=float)))
    if not items:
        raise ValueError("refusing to write an empty trace")
    m = items[0][1].shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"score_{j}" for j in range(m)])
        for step, mat in items:
            if mat.ndim != 2 or mat.shape[1] != m:
                raise ValueError(f"step {step}: expected {m} score columns")
            for row in mat.tolist():
                w.writerow([step] + [repr(x) for x in row])


def read_trace(path) -> list[tuple[int, np.ndarray]]:
    """Parse a trace file into [(step, scores), ...] in file order."""
    path = Path(path)
    groups: list[tuple[int, list[list[float]]]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise TraceError(path, 1, "missing header")
        m = len(header) - 1
        expected = ["step"] + [f"score_{j}" for j in range(m)]
        if m < 2 or [h.strip() for h in header] != expected:
            raise TraceError(path, 1, "header must be step,score_0,...,score_{m-1} with m >= 2")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != m + 1:
                raise TraceError(path, lineno, f"expected {m + 1} columns, got {len(row)}")
            try:
                step = int(row[0])
                vals = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise TraceError(path, lineno, f"unparseable value ({exc})") from None
            for x in vals:
                if not math.isfinite(x) or not 0.0 <= x < 1.0:
                    raise TraceError(path, lineno, f"score {x!r} outside [0, 1)")
            if groups and step == groups[-1][0]:
                groups[-1][1].append(vals)
            elif groups and step < groups[-1][0]:
                raise TraceError(path, lineno, f"step {step} after step {groups[-1][0]}")
            else:
                groups.append((step, [vals]))
    if not groups:
        raise TraceError(path, 2, "trace has no rows")
    return [(step, np.array(rows, dtype=float)) for step, rows in groups]


def layer_paths(path, layers: int) -> list[Path]:
    """Files backing a trace of ``layers`` layers.

    A single existing file serves a one-layer run; otherwise ``path`` is a
    stem and layer ``i`` lives in ``<stem>_layer<i>.csv``.
    """
    path = Path(path)
    if layers == 1 and path.is_file():
        return [path]
    stem = path.with_suffix("") if path.suffix == ".csv" else path
    return [stem.parent / f"{stem.name}_layer{i}.csv" for i in range(layers)]
