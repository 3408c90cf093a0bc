"""Functional datasets: construction, CSV ingestion and descriptive summaries."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DuplicateTime, EmptyDataset, NonFiniteValue, ParseError


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """A finite sample ``{(t_i, y_i)}`` observed on one time scale.

    Rows are sorted by time on construction. Duplicate time stamps raise
    :class:`DuplicateTime` unless ``resolve_ties`` is set, in which case each
    repeated stamp is nudged upward to the next representable float until all
    stamps are distinct; the number of nudged rows is kept in ``provenance``.
    """

    label: str
    times: np.ndarray
    values: np.ndarray
    time_support: tuple = None
    units: str = ""
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __init__(self, times, values, label="", time_support=None, units="",
                 provenance=None, diagnostics=None, resolve_ties=False):
        t = np.asarray(times, dtype=float).ravel()
        y = np.asarray(values, dtype=float).ravel()
        if t.size != y.size:
            raise ValueError(f"times ({t.size}) and values ({y.size}) differ in length")
        if t.size == 0:
            raise EmptyDataset(f"dataset {label!r} has no observations")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise NonFiniteValue(f"dataset {label!r} contains non-finite entries")
        order = np.argsort(t, kind="stable")
        t, y = t[order], y[order]
        provenance = dict(provenance or {})
        dup = np.diff(t) <= 0
        if dup.any():
            if not resolve_ties:
                k = int(np.flatnonzero(dup)[0])
                raise DuplicateTime(f"dataset {label!r} has repeated time {t[k]!r}")
            t = t.copy()
            nudged = 0
            for k in range(1, t.size):
                if t[k] <= t[k - 1]:
                    t[k] = np.nextafter(t[k - 1], np.inf)
                    nudged += 1
            provenance["tie_jitter_rows"] = provenance.get("tie_jitter_rows", 0) + nudged
        if time_support is None:
            time_support = (float(t[0]), float(t[-1]))
        else:
            lo, hi = (float(v) for v in time_support)
            if lo > t[0] or hi < t[-1]:
                raise ValueError("time_support must contain every observation time")
            time_support = (lo, hi)
        object.__setattr__(self, "label", str(label))
        object.__setattr__(self, "times", _frozen(t))
        object.__setattr__(self, "values", _frozen(y))
        object.__setattr__(self, "time_support", time_support)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "provenance", provenance)
        object.__setattr__(self, "diagnostics", dict(diagnostics or {}))

    def __len__(self):
        return self.times.size

    @property
    def size(self) -> int:
        return self.times.size

    @property
    def density(self) -> float:
        """Points per unit time over the time support (inf for a single point)."""
        lo, hi = self.time_support
        return math.inf if hi <= lo else self.size / (hi - lo)

    def with_values(self, values, label=None) -> "FunctionalDataset":
        return FunctionalDataset(self.times, values, label=self.label if label is None else label,
                                 time_support=self.time_support, units=self.units,
                                 provenance=self.provenance)

    def drop(self, index: int) -> "FunctionalDataset":
        """Copy without the observation at ``index`` (sorted order)."""
        keep = np.ones(self.size, dtype=bool)
        keep[index] = False
        return FunctionalDataset(self.times[keep], self.values[keep], label=self.label,
                                 time_support=self.time_support, units=self.units,
                                 provenance=self.provenance)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,y\n")
        for ti, yi in zip(self.times, self.values):
            buf.write(f"{ti:.17g},{yi:.17g}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class DatasetSummary:
    size: int
    t_range: tuple
    y_range: tuple

    def as_dict(self):
        return {"size": self.size, "t_range": list(self.t_range), "y_range": list(self.y_range)}


def summarize(ds: FunctionalDataset) -> DatasetSummary:
    return DatasetSummary(
        size=ds.size,
        t_range=(float(ds.times.min()), float(ds.times.max())),
        y_range=(float(ds.values.min()), float(ds.values.max())),
    )


def parse_csv(text: str, label: str = "", units: str = "", resolve_ties: bool = False,
              source: Optional[str] = None) -> FunctionalDataset:
    """Parse ``t,y`` CSV text with a one-line header.

    Rows with a blank field are dropped and counted in
    ``diagnostics["dropped_blank_rows"]``; anything else that is not a pair of
    decimal numbers raises :class:`ParseError`.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyDataset("empty file") from None
    if len(header) != 2:
        raise ParseError(f"expected a two-column header, got {header!r}")
    times, values = [], []
    dropped = 0
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ParseError(f"line {lineno}: expected 2 fields, got {len(row)}")
        a, b = row[0].strip(), row[1].strip()
        if not a or not b:
            dropped += 1
            continue
        try:
            ti, yi = float(a), float(b)
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric row {row!r}") from None
        if not (math.isfinite(ti) and math.isfinite(yi)):
            raise NonFiniteValue(f"line {lineno}: non-finite value in {row!r}")
        times.append(ti)
        values.append(yi)
    if not times:
        raise EmptyDataset(f"no observations in {source or 'input'}")
    prov = {"source": source} if source else {}
    return FunctionalDataset(times, values, label=label, units=units, provenance=prov,
                             diagnostics={"dropped_blank_rows": dropped},
                             resolve_ties=resolve_ties)


def load_dataset(path, label: Optional[str] = None, units: str = "",
                 resolve_ties: bool = False) -> FunctionalDataset:
    path = Path(path)
    text = path.read_text(encoding="utf-8-sig")
    return parse_csv(text, label=path.stem if label is None else label, units=units,
                     resolve_ties=resolve_ties, source=str(path))
