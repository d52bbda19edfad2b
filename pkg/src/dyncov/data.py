"""Price/return ingestion: CSV parsing, return construction, standardization."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import EmptyFile, HeaderMismatch, NonPositivePrice, TooFewObservations, ZeroVarianceColumn

logger = logging.getLogger(__name__)

TIMESTAMP_NAMES = {"date", "time", "timestamp", "datetime", "index", "t", "step"}
DEFAULT_STALE_RUN = 5


@dataclass
class RawTable:
    columns: list[str]
    values: np.ndarray  # (rows, columns)
    timestamps: list[str] | None = None
    dropped: int = 0


@dataclass
class ReturnSeries:
    values: np.ndarray  # (T, d)
    columns: list[str] = field(default_factory=list)
    timestamps: list[str] | None = None
    dropped: int = 0

    @property
    def shape(self):
        return self.values.shape


@dataclass
class Dataset:
    name: str
    series: ReturnSeries
    source_path: str = ""
    standardized: bool = False


def _is_timestamp(s: str) -> bool:
    s = s.strip()
    try:
        datetime.fromisoformat(s)
        return not _is_number(s)
    except ValueError:
        return False


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_csv(path) -> RawTable:
    """Read a header + numeric-columns CSV with an optional leading timestamp column.

    Rows with a cell that does not parse (or the wrong number of cells) are
    dropped and counted in ``RawTable.dropped``.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyFile(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyFile(f"{path} has a header but no data rows")
    if all(_is_number(h) for h in header):
        raise HeaderMismatch("first row looks numeric; a header row is required")
    if len(set(header)) != len(header):
        raise HeaderMismatch("duplicate column names in header")
    has_ts = header[0].lower() in TIMESTAMP_NAMES or _is_timestamp(body[0][0])
    cols = header[1:] if has_ts else header
    if not cols:
        raise HeaderMismatch("no value columns")
    values, stamps, dropped = [], [], 0
    for r in body:
        if len(r) != len(header):
            dropped += 1
            continue
        cells = r[1:] if has_ts else r
        try:
            row = [float(c) for c in cells]
        except ValueError:
            dropped += 1
            continue
        if not all(np.isfinite(row)):
            dropped += 1
            continue
        values.append(row)
        if has_ts:
            stamps.append(r[0].strip())
    if dropped:
        logger.warning("%s: dropped %d unparsable rows", path, dropped)
    if not values:
        raise EmptyFile(f"{path} has no parsable data rows")
    return RawTable(cols, np.array(values), stamps if has_ts else None, dropped)


def to_returns(prices: RawTable, kind: str = "log", stale_run: int = DEFAULT_STALE_RUN) -> ReturnSeries:
    """Returns from prices, dropping stale-price gaps.

    A gap is a run of more than ``stale_run`` identical price rows (counted on
    prices: six constant prices exceed the default of five). The zero-return
    rows inside a gap are removed.
    """
    P = np.asarray(prices.values, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] < 2:
        raise TooFewObservations("need at least two price rows")
    if kind == "log":
        if np.any(P <= 0):
            raise NonPositivePrice("log returns need strictly positive prices")
        R = np.log(P[1:] / P[:-1])
    elif kind == "simple":
        R = P[1:] / P[:-1] - 1.0
    else:
        raise ValueError(f"unknown return kind {kind!r}")
    stamps = prices.timestamps[1:] if prices.timestamps else None
    zero = np.all(R == 0.0, axis=1)
    keep = np.ones(R.shape[0], dtype=bool)
    i = 0
    while i < R.shape[0]:
        if zero[i]:
            j = i
            while j < R.shape[0] and zero[j]:
                j += 1
            # j - i zero returns span j - i + 1 constant price rows
            if j - i + 1 > stale_run:
                keep[i:j] = False
            i = j
        else:
            i += 1
    n_drop = int(np.count_nonzero(~keep))
    if n_drop:
        logger.warning("dropped %d stale-price return rows", n_drop)
    if not keep.any():
        logger.warning("no returns left after removing stale-price gaps")
    return ReturnSeries(
        R[keep], list(prices.columns),
        [s for s, k in zip(stamps, keep) if k] if stamps else None,
        n_drop,
    )


def standardize(series: ReturnSeries, name: str = "", source_path: str = "") -> Dataset:
    """Column-wise zero mean and unit (population) standard deviation."""
    X = np.asarray(series.values, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise TooFewObservations("need at least two rows to standardize")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.maximum(1.0, np.abs(mean))
    bad = np.flatnonzero(std <= 1e-14 * scale)
    if bad.size:
        raise ZeroVarianceColumn(f"columns {bad.tolist()} have zero variance")
    Z = (X - mean) / std
    # second pass removes roundoff left by the first
    Z = (Z - Z.mean(axis=0)) / Z.std(axis=0)
    out = ReturnSeries(Z, list(series.columns), series.timestamps, series.dropped)
    return Dataset(name, out, source_path, True)


def write_series_csv(X, fh, columns=None, timestamps=None) -> None:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    cols = columns or [f"x{i}" for i in range(X.shape[1])]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", *cols])
    for t, row in enumerate(X):
        stamp = timestamps[t] if timestamps else t
        w.writerow([stamp, *(format(float(v), ".17g") for v in row)])
