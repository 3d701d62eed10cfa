"""Patent cohort records, CSV ingestion, validation and design-matrix encoding."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import IO, Iterable, Sequence

import numpy as np

MAX_YEARS = 20

CSV_HEADER = (
    "id",
    "filing_year",
    "survival_years",
    "event",
    "nc",
    "ni",
    "fs",
    "ts",
    "dsir",
    "ow",
    "tech",
    "firm_id",
)

# CSV code -> model label of the technology dummy
TECH_LABELS = {
    "chemistry": "Chemistry",
    "electrical": "Electrical",
    "mechanical": "Mechanical",
    "instruments": "Instrument",
    "other": "OtherField",
}
TECH_CODES = {v: k for k, v in TECH_LABELS.items()}
REFERENCE_TECH = "instruments"

BASE_COVARIATES = ("DSIR", "NC", "NI", "FS", "TS", "OW")
TECH_DUMMIES = ("Electrical", "Instrument", "Chemistry", "Mechanical", "OtherField")

_INT_FIELDS = ("filing_year", "survival_years", "event", "nc", "ni", "fs", "ts", "dsir", "ow")


class DatasetError(ValueError):
    """Raised when a cohort cannot be loaded."""


class SchemaError(DatasetError):
    pass


class IdentifiabilityError(ValueError):
    """A model cannot be estimated on the given data (constant column, singular information)."""

    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class PatentRecord:
    id: str
    filing_year: int
    survival_years: int
    event: int
    nc: int
    ni: int
    fs: int
    ts: int
    dsir: int
    ow: int
    tech: str
    firm_id: str

    def to_row(self) -> list[str]:
        return [str(getattr(self, f.name)) for f in fields(self)]


@dataclass(frozen=True)
class Issue:
    row: int  # 1-based data row (header excluded)
    field: str
    message: str

    def __str__(self) -> str:
        return f"row {self.row}: {self.field}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def __len__(self) -> int:
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)


@dataclass(frozen=True)
class Dataset:
    records: tuple[PatentRecord, ...]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @cached_property
    def columns(self) -> dict[str, np.ndarray]:
        """Column arrays keyed by CSV field name. Read-only views."""
        out: dict[str, np.ndarray] = {}
        for name in _INT_FIELDS:
            arr = np.fromiter((getattr(r, name) for r in self.records), dtype=np.int64, count=len(self.records))
            arr.flags.writeable = False
            out[name] = arr
        for name in ("id", "tech", "firm_id"):
            arr = np.array([getattr(r, name) for r in self.records], dtype=object)
            arr.flags.writeable = False
            out[name] = arr
        return out

    @property
    def times(self) -> np.ndarray:
        return self.columns["survival_years"]

    @property
    def events(self) -> np.ndarray:
        return self.columns["event"]

    def subset(self, mask: Sequence[bool] | np.ndarray) -> "Dataset":
        keep = tuple(r for r, m in zip(self.records, mask) if m)
        return Dataset(keep, self.provenance)


def validate(d: Dataset) -> ValidationReport:
    """Collect every invariant violation; never raises and never mutates."""
    issues: list[Issue] = []
    seen: dict[str, int] = {}
    for i, r in enumerate(d.records, start=1):
        if not 1 <= r.survival_years <= MAX_YEARS:
            issues.append(Issue(i, "survival_years", f"survival_years={r.survival_years} outside [1,{MAX_YEARS}]"))
        if r.event not in (0, 1):
            issues.append(Issue(i, "event", "event must be 0 or 1"))
        if r.dsir not in (0, 1):
            issues.append(Issue(i, "dsir", "dsir must be 0 or 1"))
        if r.ow not in (0, 1):
            issues.append(Issue(i, "ow", "ow must be 0 or 1"))
        for name in ("nc", "ni", "fs"):
            if getattr(r, name) < 0:
                issues.append(Issue(i, name, f"{name} must be non-negative"))
        if r.ts < 1:
            issues.append(Issue(i, "ts", "ts must be >= 1"))
        if r.tech not in TECH_LABELS:
            issues.append(Issue(i, "tech", f"unknown technology {r.tech!r}; expected one of {sorted(TECH_LABELS)}"))
        if r.id in seen:
            issues.append(Issue(i, "id", f"duplicate id {r.id!r} (first seen at row {seen[r.id]})"))
        else:
            seen[r.id] = i
    return ValidationReport(tuple(issues))


def load_dataset(source: IO[bytes] | IO[str] | bytes | str, *, strict: bool = True, provenance: str = "") -> Dataset:
    """Parse a cohort CSV.

    ``source`` is a binary or text stream, raw bytes, or CSV text. With
    ``strict`` (the default) any invariant violation raises
    :class:`DatasetError`; otherwise the records are returned as parsed and
    :func:`validate` reports the problems.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    if text.startswith("﻿"):
        text = text[1:]

    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty input: header line is mandatory") from None
    for col in CSV_HEADER:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    pos = {name: header.index(name) for name in CSV_HEADER}

    records = []
    for rownum, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DatasetError(f"row {rownum}: expected {len(header)} cells, got {len(row)}")
        values: dict[str, object] = {}
        for name in CSV_HEADER:
            cell = row[pos[name]].strip()
            if name in _INT_FIELDS:
                try:
                    values[name] = int(cell)
                except ValueError:
                    raise DatasetError(f"row {rownum}, column {name!r}: cannot parse {cell!r} as integer") from None
            else:
                values[name] = cell
        records.append(PatentRecord(**values))

    d = Dataset(tuple(records), provenance)
    if strict:
        report = validate(d)
        if not report.ok:
            raise DatasetError("; ".join(str(i) for i in report.issues))
    return d


def dump_dataset(d: Dataset, sink: IO[str] | None = None) -> str:
    """Serialize to the cohort CSV schema. Returns the text and optionally writes it."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in d.records:
        w.writerow(r.to_row())
    text = buf.getvalue()
    if sink is not None:
        sink.write(text)
    return text


@dataclass(frozen=True)
class DesignMatrix:
    column_names: tuple[str, ...]
    rows: np.ndarray  # (n, p) float64
    times: np.ndarray  # (n,) int64
    events: np.ndarray  # (n,) int64

    def __post_init__(self):
        n = len(self.times)
        if self.rows.shape != (n, len(self.column_names)):
            raise ValueError(f"rows shape {self.rows.shape} does not match ({n}, {len(self.column_names)})")
        if len(self.events) != n:
            raise ValueError("events length mismatch")
        for a in (self.rows, self.times, self.events):
            a.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def p(self) -> int:
        return len(self.column_names)

    @classmethod
    def from_arrays(cls, x, times, events, names: Iterable[str] | None = None) -> "DesignMatrix":
        x = np.array(x, dtype=np.float64, copy=True)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if names is None:
            names = [f"x{i}" for i in range(x.shape[1])]
        return cls(
            tuple(names),
            np.ascontiguousarray(x),
            np.array(times, dtype=np.int64, copy=True),
            np.array(events, dtype=np.int64, copy=True),
        )


def _record_column(d: Dataset, label: str) -> np.ndarray:
    cols = d.columns
    if label in BASE_COVARIATES:
        return cols[label.lower()].astype(np.float64)
    if label in TECH_DUMMIES:
        return (cols["tech"] == TECH_CODES[label]).astype(np.float64)
    raise SpecError(f"unknown covariate {label!r}")


def encode_design(d: Dataset, spec) -> DesignMatrix:
    """Build the numeric design for ``spec`` (a :class:`~patentsurv.model_suite.CoxModelSpec`)."""
    if len(d) == 0:
        raise DatasetError("cannot encode an empty dataset")
    names = spec.column_names()
    cols = []
    for name in names:
        if "*" in name:
            a, b = name.split("*")
            cols.append(_record_column(d, a) * _record_column(d, b))
        else:
            cols.append(_record_column(d, name))
    x = np.column_stack(cols) if cols else np.empty((len(d), 0))
    for j, name in enumerate(names):
        if np.all(x[:, j] == x[0, j]):
            raise IdentifiabilityError(f"column {name!r} is constant across all records", column=name)
    return DesignMatrix(
        tuple(names),
        np.ascontiguousarray(x, dtype=np.float64),
        np.array(d.times, dtype=np.int64),
        np.array(d.events, dtype=np.int64),
    )
