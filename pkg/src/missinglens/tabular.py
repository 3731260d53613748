"""Column-typed tables with first-class per-cell missingness.

Tables are immutable: every transform returns a new :class:`Table` that
shares untouched columns with its parent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, ParseError, SchemaError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
BINARY = "binary"
KINDS = (CONTINUOUS, CATEGORICAL, BINARY)

DEFAULT_MISSING_TOKENS = frozenset({"", "NA", "NaN"})
MISSING_CATEGORY = "__missing__"
SENTINEL_GAP = 0.05


@dataclass(frozen=True, eq=False)
class Column:
    """One table column.

    Continuous and binary columns store float64 values with NaN in missing
    cells; categorical columns store int64 codes into ``categories`` with -1
    in missing cells. ``sentinel`` is set once missing cells have been
    encoded as an in-band value (see :func:`encode_missing`).
    """

    name: str
    kind: str
    values: np.ndarray
    missing_mask: np.ndarray
    categories: tuple[str, ...] = ()
    sentinel: float | str | None = None
    imputed_mask: np.ndarray | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        mask = np.asarray(self.missing_mask, dtype=bool)
        if self.kind == CATEGORICAL:
            values = np.asarray(self.values, dtype=np.int64)
        else:
            values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or mask.shape != values.shape:
            raise SchemaError(f"column {self.name!r}: values and mask must be equal-length 1-D")
        if self.kind == CATEGORICAL:
            bad = (values < 0) | (values >= len(self.categories))
            if np.any(bad & ~mask):
                raise SchemaError(f"column {self.name!r}: category code out of range")
            values = np.where(mask, -1, values)
        else:
            if not np.all(np.isfinite(values[~mask])):
                raise DataError(f"column {self.name!r}: observed cells must be finite")
            values = np.where(mask, np.nan, values)
            if self.kind == BINARY and not np.all(np.isin(values[~mask], (0.0, 1.0))):
                raise SchemaError(f"column {self.name!r}: binary cells must be 0 or 1")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing_mask", mask)
        object.__setattr__(self, "categories", tuple(self.categories))
        if self.imputed_mask is not None:
            imp = np.asarray(self.imputed_mask, dtype=bool)
            if imp.shape != values.shape:
                raise SchemaError(f"column {self.name!r}: imputed_mask has wrong length")
            imp.setflags(write=False)
            object.__setattr__(self, "imputed_mask", imp)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def is_numeric(self) -> bool:
        return self.kind != CATEGORICAL

    def observed(self) -> np.ndarray:
        """Observed cells only (sentinel cells count as observed)."""
        return self.values[~self.missing_mask]

    def sentinel_mask(self) -> np.ndarray:
        """Cells holding the encoded-missing sentinel."""
        if self.sentinel is None:
            return np.zeros(len(self), dtype=bool)
        if self.kind == CATEGORICAL:
            code = self.categories.index(self.sentinel)
            return self.values == code
        return self.values == self.sentinel

    def absent_mask(self) -> np.ndarray:
        """Cells that carry no real measurement: masked or sentinel-encoded."""
        return self.missing_mask | self.sentinel_mask()

    def cell_text(self, i: int) -> str:
        if self.missing_mask[i]:
            return ""
        if self.kind == CATEGORICAL:
            return self.categories[self.values[i]]
        return format_number(self.values[i])


def format_number(v: float) -> str:
    """Shortest text that parses back to exactly ``v``."""
    v = float(v)
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def make_column(name: str, values: Sequence[Any], kind: str | None = None) -> Column:
    """Build a column from Python values, treating ``None``/NaN as missing."""
    raw = list(values)
    missing = [v is None or (isinstance(v, float) and math.isnan(v)) for v in raw]
    if kind is None:
        kind = CONTINUOUS if all(
            isinstance(v, (int, float, np.integer, np.floating)) for v, m in zip(raw, missing) if not m
        ) else CATEGORICAL
    if kind == CATEGORICAL:
        cats: list[str] = []
        codes = []
        for v, m in zip(raw, missing):
            if m:
                codes.append(-1)
                continue
            s = str(v)
            if s not in cats:
                cats.append(s)
            codes.append(cats.index(s))
        return Column(name, kind, np.array(codes, dtype=np.int64), np.array(missing), tuple(cats))
    vals = np.array([np.nan if m else float(v) for v, m in zip(raw, missing)], dtype=np.float64)
    return Column(name, kind, vals, np.array(missing, dtype=bool))


@dataclass(frozen=True, eq=False)
class Table:
    columns: tuple[Column, ...]
    target_index: int | None = None

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names: {dup}")
        if cols and len({len(c) for c in cols}) != 1:
            raise SchemaError("columns have different lengths")
        if self.target_index is not None and not 0 <= self.target_index < len(cols):
            raise SchemaError(f"target_index {self.target_index} out of range")

    @classmethod
    def from_columns(cls, columns: Iterable[Column], target: str | None = None) -> "Table":
        cols = tuple(columns)
        idx = None
        if target is not None:
            idx = [c.name for c in cols].index(target)
        return cls(cols, idx)

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def target(self) -> str | None:
        return None if self.target_index is None else self.columns[self.target_index].name

    def index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise SchemaError(f"no column named {name!r}")

    def __getitem__(self, name: str) -> Column:
        return self.columns[self.index(name)]

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def with_column(self, column: Column) -> "Table":
        """Replace the same-named column, or append it if new."""
        cols = list(self.columns)
        if column.name in self:
            cols[self.index(column.name)] = column
        else:
            cols.append(column)
        return Table(tuple(cols), self.target_index)

    def with_target(self, name: str | None) -> "Table":
        return Table(self.columns, None if name is None else self.index(name))

    def select(self, names: Sequence[str]) -> "Table":
        cols = tuple(self[n] for n in names)
        tgt = self.target
        return Table(cols, names.index(tgt) if tgt in names else None)

    def drop(self, names: Iterable[str]) -> "Table":
        gone = set(names)
        return self.select([n for n in self.names if n not in gone])

    def take(self, rows: np.ndarray) -> "Table":
        """Row subset (or reordering) of every column."""
        rows = np.asarray(rows)
        cols = []
        for c in self.columns:
            imp = None if c.imputed_mask is None else c.imputed_mask[rows]
            cols.append(replace(c, values=c.values[rows], missing_mask=c.missing_mask[rows], imputed_mask=imp))
        return Table(tuple(cols), self.target_index)

    def matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        """Float matrix of the named columns; categorical codes as floats, NaN where missing."""
        names = self.names if names is None else list(names)
        out = np.empty((self.n_rows, len(names)))
        for j, n in enumerate(names):
            c = self[n]
            out[:, j] = np.where(c.missing_mask, np.nan, c.values.astype(np.float64))
        return out


@dataclass(frozen=True)
class MissingEncoding:
    """How missing cells become an in-band value.

    ``strategy`` is one of ``"sentinel-below-min"``, ``"sentinel-fixed"``
    (requires ``value``) or ``"separate-category"``.
    """

    strategy: str = "sentinel-below-min"
    value: float | str | None = None

    @classmethod
    def below_min(cls) -> "MissingEncoding":
        return cls("sentinel-below-min")

    @classmethod
    def fixed(cls, value: float | str) -> "MissingEncoding":
        return cls("sentinel-fixed", value)

    @classmethod
    def category(cls) -> "MissingEncoding":
        return cls("separate-category")

    def __post_init__(self):
        if self.strategy not in ("sentinel-below-min", "sentinel-fixed", "separate-category"):
            raise DataError(f"unknown missing-encoding strategy {self.strategy!r}")
        if self.strategy == "sentinel-fixed" and self.value is None:
            raise DataError("sentinel-fixed needs a value")


# ----------------------------------------------------------------------------- CSV


def _parse_float(text: str) -> float | None:
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    missing_tokens: Iterable[str] | None = None,
    delimiter: str = ",",
    target: str | None = None,
) -> Table:
    """Read a headed CSV into a :class:`Table`.

    Cells are whitespace-trimmed before being compared with ``missing_tokens``
    (default ``{"", "NA", "NaN"}``). A column whose observed cells all parse
    as finite numbers is continuous, otherwise categorical; ``schema`` maps
    column names to a kind to override that guess.
    """
    tokens = DEFAULT_MISSING_TOKENS if missing_tokens is None else frozenset(missing_tokens)
    schema = dict(schema or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty (no header row)") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            dup = sorted({h for h in header if header.count(h) > 1})
            raise SchemaError(f"duplicate header names: {dup}")
        unknown = set(schema) - set(header)
        if unknown:
            raise SchemaError(f"schema names columns not in header: {sorted(unknown)}")
        cells: list[list[str]] = [[] for _ in header]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=lineno)
            for j, v in enumerate(row):
                cells[j].append(v.strip())

    columns = []
    for name, col in zip(header, cells):
        missing = np.array([v in tokens for v in col], dtype=bool)
        kind = schema.get(name)
        parsed = [None if m else _parse_float(v) for v, m in zip(col, missing)]
        if kind is None:
            numeric = all(p is not None for p, m in zip(parsed, missing) if not m)
            kind = CONTINUOUS if numeric else CATEGORICAL
        if kind == CATEGORICAL:
            cats: dict[str, int] = {}
            codes = np.full(len(col), -1, dtype=np.int64)
            for i, (v, m) in enumerate(zip(col, missing)):
                if not m:
                    codes[i] = cats.setdefault(v, len(cats))
            columns.append(Column(name, kind, codes, missing, tuple(cats)))
        elif kind in (CONTINUOUS, BINARY):
            bad = [i for i, (p, m) in enumerate(zip(parsed, missing)) if p is None and not m]
            if bad:
                raise ParseError(f"column {name!r} declared {kind} but cell is not numeric", row=bad[0] + 2)
            vals = np.array([np.nan if p is None else p for p in parsed], dtype=np.float64)
            columns.append(Column(name, kind, vals, missing))
        else:
            raise SchemaError(f"unknown kind {kind!r} for column {name!r}")
    table = Table(tuple(columns))
    return table.with_target(target) if target is not None else table


def write_csv(table: Table, path: str | Path, delimiter: str = ",") -> None:
    """Write ``table`` with missing cells as the empty string."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(table.names)
        for i in range(table.n_rows):
            w.writerow([c.cell_text(i) for c in table.columns])


# ----------------------------------------------------------------------------- transforms


def encode_missing(table: Table, column: str, enc: MissingEncoding) -> Table:
    """Replace missing cells of ``column`` by an in-band sentinel.

    The sentinel is recorded on the returned column so binning can route it
    to a dedicated missing bin and :func:`decode_missing` can undo the step.
    """
    col = table[column]
    if not col.missing_mask.any():
        return table.with_column(replace(col, meta={**col.meta, "encoding": "none", "note": "no sentinel used"}))

    if col.kind == CATEGORICAL:
        if enc.strategy == "sentinel-below-min":
            raise DataError(f"column {column!r} is categorical; use separate-category")
        label = MISSING_CATEGORY if enc.strategy == "separate-category" else str(enc.value)
        if label in col.categories:
            if enc.strategy == "sentinel-fixed":
                raise DataError(f"sentinel category {label!r} already used by observed cells")
            while label in col.categories:
                label = "_" + label
        cats = col.categories + (label,)
        codes = np.where(col.missing_mask, len(cats) - 1, col.values)
        new = replace(col, values=codes, missing_mask=np.zeros(len(col), bool), categories=cats,
                      sentinel=label, meta={**col.meta, "encoding": enc.strategy})
        return table.with_column(new)

    if enc.strategy == "separate-category":
        raise DataError(f"column {column!r} is numeric; separate-category needs a categorical column")
    obs = col.observed()
    if enc.strategy == "sentinel-fixed":
        s = float(enc.value)
        if obs.size and obs.min() <= s <= obs.max():
            raise DataError(
                f"sentinel {s} lies inside the observed range [{obs.min()}, {obs.max()}] of {column!r}"
            )
    else:
        if obs.size == 0:
            s = -1.0
        else:
            lo, hi = float(obs.min()), float(obs.max())
            gap = SENTINEL_GAP * (hi - lo)
            if gap == 0.0:
                gap = SENTINEL_GAP * max(abs(lo), 1.0)
            s = lo - gap
    vals = np.where(col.missing_mask, s, col.values)
    new = replace(col, values=vals, missing_mask=np.zeros(len(col), bool), sentinel=s,
                  meta={**col.meta, "encoding": enc.strategy})
    return table.with_column(new)


def decode_missing(table: Table, column: str) -> Table:
    """Inverse of :func:`encode_missing`: sentinel cells become missing again."""
    col = table[column]
    if col.sentinel is None:
        return table
    hit = col.sentinel_mask()
    mask = col.missing_mask | hit
    if col.kind == CATEGORICAL:
        code = col.categories.index(col.sentinel)
        if code != len(col.categories) - 1:
            raise DataError("sentinel category is not the trailing category")
        new = replace(col, values=np.where(mask, -1, col.values), missing_mask=mask,
                      categories=col.categories[:-1], sentinel=None)
    else:
        new = replace(col, values=np.where(mask, np.nan, col.values), missing_mask=mask, sentinel=None)
    meta = {k: v for k, v in new.meta.items() if k not in ("encoding", "note")}
    return table.with_column(replace(new, meta=meta))


def missingness_indicator(table: Table, column: str) -> Column:
    col = table[column]
    mask = col.absent_mask()
    return Column(f"{column}_missing", BINARY, mask.astype(np.float64), np.zeros(len(col), bool))


@dataclass(frozen=True)
class ColumnStats:
    mean: float
    median: float
    min: float
    max: float
    missing_rate: float
    n_observed: int

    @property
    def defined(self) -> bool:
        return self.n_observed > 0


def column_stats(table: Table, column: str) -> ColumnStats:
    """Statistics over observed cells of a numeric column.

    Sentinel-encoded cells are excluded like masked ones. With no observed
    cells every statistic is NaN and ``defined`` is false.
    """
    col = table[column]
    if col.kind == CATEGORICAL:
        raise DataError(f"column {column!r} is categorical")
    absent = col.absent_mask()
    n = len(col)
    obs = col.values[~absent]
    rate = float(absent.sum() / n) if n else 1.0
    if obs.size == 0:
        nan = float("nan")
        return ColumnStats(nan, nan, nan, nan, rate, 0)
    return ColumnStats(float(obs.mean()), float(np.median(obs)), float(obs.min()), float(obs.max()), rate, int(obs.size))
