"""Observed samples (Y, X, W) and CSV ingestion.

Categories of X are 1-based integers ``1..K``; the instrument W is binary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

DEFAULT_SCHEMA = {"y": "y", "x": "x", "w": "w"}


@dataclass(frozen=True, eq=False)
class Sample:
    """An iid sample of (Y, X, W).

    Arrays are stored read-only. ``K`` may exceed ``x.max()``; the extra
    categories are then empty.
    """

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    K: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).copy()
        x = np.asarray(self.x).copy()
        w = np.asarray(self.w).copy()
        if not (y.ndim == x.ndim == w.ndim == 1):
            raise DataError("y, x and w must be one-dimensional")
        if not (len(y) == len(x) == len(w)):
            raise DataError(f"length mismatch: y={len(y)}, x={len(x)}, w={len(w)}")
        if len(y) == 0:
            raise DataError("empty sample")
        if not np.all(np.isfinite(y)):
            bad = int(np.flatnonzero(~np.isfinite(y))[0]) + 1
            raise DataError(f"non-finite outcome value, row {bad}")
        if x.dtype.kind == "f":
            if np.any(x != np.round(x)):
                raise DataError("x must hold integer categories")
        x = x.astype(np.int64)
        w = w.astype(np.int64) if w.dtype.kind in "iub" else w
        K = int(self.K)
        if K < 1:
            raise DataError("K must be at least 1")
        if np.any(x < 1) or np.any(x > K):
            bad = int(np.flatnonzero((x < 1) | (x > K))[0]) + 1
            raise DataError(f"category outside 1..{K}, row {bad}")
        if np.any((w != 0) & (w != 1)):
            bad = int(np.flatnonzero((w != 0) & (w != 1))[0]) + 1
            raise DataError(f"invalid instrument value, row {bad}")
        w = w.astype(np.int64)
        for arr in (y, x, w):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "K", K)

    @property
    def n(self) -> int:
        return len(self.y)

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.K == other.K
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.w, other.w)
        )

    def subsample(self, m: int) -> "Sample":
        """The first ``m`` observations."""
        return Sample(self.y[:m], self.x[:m], self.w[:m], self.K)

    def relabel(self, perm) -> "Sample":
        """Rename category ``k`` to ``perm[k-1]`` (``perm`` is a permutation of 1..K)."""
        perm = np.asarray(perm, dtype=np.int64)
        return Sample(self.y, perm[self.x - 1], self.w, self.K)


def split_counts(sample: Sample) -> np.ndarray:
    """Cell counts ``n[l, k-1] = #{i : W_i = l, X_i = k}`` as a (2, K) integer array."""
    counts = np.zeros((2, sample.K), dtype=np.int64)
    np.add.at(counts, (sample.w, sample.x - 1), 1)
    return counts


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-numeric value {text!r} in column {col!r}, row {row}") from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value in column {col!r}, row {row}")
    return value


def load_csv(path, schema: dict | None = None) -> Sample:
    """Read a sample from a comma-separated file with a header row.

    ``schema`` maps the logical names ``"y"``, ``"x"``, ``"w"`` to column
    names, and may carry ``"K"`` to declare more categories than observed.
    Rows are reported 1-based, counting data rows only.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"empty file: {path}")
        header = [h.strip() for h in header]
        cols = {}
        for key in ("y", "x", "w"):
            name = schema[key]
            if name not in header:
                raise DataError(f"missing column {name!r}")
            cols[key] = header.index(name)
        ys, xs, ws = [], [], []
        for row, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) < len(header):
                raise DataError(f"too few fields, row {row}")
            ys.append(_parse_float(record[cols["y"]], row, schema["y"]))
            xv = _parse_float(record[cols["x"]], row, schema["x"])
            if xv != int(xv) or xv <= 0:
                raise DataError(f"invalid category value {record[cols['x']]!r}, row {row}")
            xs.append(int(xv))
            wv = _parse_float(record[cols["w"]], row, schema["w"])
            if wv not in (0.0, 1.0):
                raise DataError(f"invalid instrument value, row {row}")
            ws.append(int(wv))
    if not ys:
        raise DataError(f"empty file: {path}")
    K = schema.get("K")
    K = max(xs) if K is None else int(K)
    if K < max(xs):
        raise DataError(f"declared K={K} but category {max(xs)} observed")
    return Sample(np.array(ys), np.array(xs), np.array(ws), K)


def save_csv(sample: Sample, path) -> None:
    """Write ``sample`` as ``y,x,w`` with round-trip exact float formatting."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["y", "x", "w"])
        for y, x, w in zip(sample.y.tolist(), sample.x.tolist(), sample.w.tolist()):
            out.writerow([repr(y), x, w])
