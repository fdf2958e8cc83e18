"""Observational data container, CSV ingestion, standardization and row filters."""

from __future__ import annotations

import csv
import math
import operator
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import CellCountError, DataError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


def _frozen(a, ndim):
    arr = np.array(a, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 0) if arr.size == 0 else arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DecompositionDataset:
    """Immutable table of (group, exposure, outcome, covariate) rows.

    ``g`` is 1 for the disadvantaged group, ``z`` is 1 for exposed units.
    Covariates are split into an allowable block (adjustment acceptable) and a
    non-allowable block. ``aux`` holds extra numeric columns that take no part in
    the analysis but may be used by row filters.
    """

    g: np.ndarray
    z: np.ndarray
    y: np.ndarray
    x_allowable: np.ndarray
    x_nonallowable: np.ndarray
    allowable_names: tuple = ()
    nonallowable_names: tuple = ()
    aux: Mapping[str, np.ndarray] = field(default_factory=dict)
    row_ids: np.ndarray | None = None
    group_name: str = "g"
    exposure_name: str = "z"
    outcome_name: str = "y"

    def __post_init__(self):
        n = len(self.y)
        set_ = object.__setattr__
        set_(self, "g", _frozen(self.g, 1))
        set_(self, "z", _frozen(self.z, 1))
        set_(self, "y", _frozen(self.y, 1))
        xa = np.asarray(self.x_allowable, dtype=float)
        xn = np.asarray(self.x_nonallowable, dtype=float)
        if xa.size == 0:
            xa = np.zeros((n, 0))
        if xn.size == 0:
            xn = np.zeros((n, 0))
        set_(self, "x_allowable", _frozen(xa, 2))
        set_(self, "x_nonallowable", _frozen(xn, 2))
        set_(self, "allowable_names", tuple(self.allowable_names))
        set_(self, "nonallowable_names", tuple(self.nonallowable_names))
        set_(self, "aux", {k: _frozen(v, 1) for k, v in dict(self.aux).items()})
        ids = np.arange(n) if self.row_ids is None else np.asarray(self.row_ids, dtype=int)
        ids = ids.copy()
        ids.setflags(write=False)
        set_(self, "row_ids", ids)
        self._validate()

    def _validate(self):
        n = len(self.y)
        for name, arr in (("g", self.g), ("z", self.z)):
            if arr.shape != (n,):
                raise DataError(f"{name} has shape {arr.shape}, expected ({n},)")
            bad = np.flatnonzero((arr != 0) & (arr != 1))
            if bad.size:
                raise DataError("value must be 0 or 1", row=int(bad[0]), column=name)
        for label, block, names in (
            ("allowable", self.x_allowable, self.allowable_names),
            ("non-allowable", self.x_nonallowable, self.nonallowable_names),
        ):
            if block.ndim != 2 or block.shape[0] != n:
                raise DataError(f"{label} covariate block has shape {block.shape}")
            if len(names) != block.shape[1]:
                raise DataError(
                    f"{label} block has {block.shape[1]} columns but {len(names)} names"
                )
        labels = self.column_names
        if len(set(labels)) != len(labels):
            raise DataError(f"duplicate covariate labels in {labels}")
        for arr in [self.y, self.x_allowable, self.x_nonallowable, *self.aux.values()]:
            if not np.all(np.isfinite(arr)):
                raise DataError("missing or non-finite values in dataset")
        counts = self.cell_counts()
        empty = [cell for cell, c in counts.items() if c == 0]
        if empty:
            raise CellCountError(f"empty (g, z) cell(s): {empty}; counts {counts}")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def column_names(self) -> tuple:
        return self.allowable_names + self.nonallowable_names

    @property
    def x(self) -> np.ndarray:
        """All covariates, allowable block first."""
        return np.hstack([self.x_allowable, self.x_nonallowable])

    def cell_counts(self) -> dict:
        return {
            (gv, zv): int(np.sum((self.g == gv) & (self.z == zv)))
            for gv in (0, 1)
            for zv in (0, 1)
        }

    def column(self, name: str) -> np.ndarray:
        if name in self.allowable_names:
            return self.x_allowable[:, self.allowable_names.index(name)]
        if name in self.nonallowable_names:
            return self.x_nonallowable[:, self.nonallowable_names.index(name)]
        if name in self.aux:
            return self.aux[name]
        roles = {self.group_name: self.g, self.exposure_name: self.z, self.outcome_name: self.y}
        if name in roles:
            return roles[name]
        raise DataError("unknown column", column=name)

    def take(self, idx) -> "DecompositionDataset":
        """Rows at ``idx`` (with repetition allowed), as a new dataset."""
        idx = np.asarray(idx, dtype=int)
        return self.replace(
            g=self.g[idx],
            z=self.z[idx],
            y=self.y[idx],
            x_allowable=self.x_allowable[idx],
            x_nonallowable=self.x_nonallowable[idx],
            aux={k: v[idx] for k, v in self.aux.items()},
            row_ids=self.row_ids[idx],
        )

    def replace(self, **changes) -> "DecompositionDataset":
        fields_ = dict(
            g=self.g,
            z=self.z,
            y=self.y,
            x_allowable=self.x_allowable,
            x_nonallowable=self.x_nonallowable,
            allowable_names=self.allowable_names,
            nonallowable_names=self.nonallowable_names,
            aux=self.aux,
            row_ids=self.row_ids,
            group_name=self.group_name,
            exposure_name=self.exposure_name,
            outcome_name=self.outcome_name,
        )
        fields_.update(changes)
        return DecompositionDataset(**fields_)

    def drop_covariate(self, name: str) -> "DecompositionDataset":
        if name in self.allowable_names:
            j = self.allowable_names.index(name)
            return self.replace(
                x_allowable=np.delete(self.x_allowable, j, axis=1),
                allowable_names=self.allowable_names[:j] + self.allowable_names[j + 1 :],
            )
        if name in self.nonallowable_names:
            j = self.nonallowable_names.index(name)
            return self.replace(
                x_nonallowable=np.delete(self.x_nonallowable, j, axis=1),
                nonallowable_names=self.nonallowable_names[:j]
                + self.nonallowable_names[j + 1 :],
            )
        raise DataError("unknown covariate", column=name)

    def equals(self, other: "DecompositionDataset") -> bool:
        """Row-for-row equality of all data and labels."""
        return (
            self.column_names == other.column_names
            and self.allowable_names == other.allowable_names
            and sorted(self.aux) == sorted(other.aux)
            and all(
                np.array_equal(a, b)
                for a, b in [
                    (self.g, other.g),
                    (self.z, other.z),
                    (self.y, other.y),
                    (self.x_allowable, other.x_allowable),
                    (self.x_nonallowable, other.x_nonallowable),
                    (self.row_ids, other.row_ids),
                ]
            )
            and all(np.array_equal(self.aux[k], other.aux[k]) for k in self.aux)
        )

    def to_rows(self):
        """Header and rows suitable for ``csv.writer``."""
        header = [self.group_name, self.exposure_name, self.outcome_name, *self.column_names, *self.aux]
        cols = [self.g, self.z, self.y, *self.x.T, *self.aux.values()]
        rows = []
        for i in range(self.n):
            rows.append([_fmt(c[i]) for c in cols])
        return header, rows


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


@dataclass(frozen=True)
class Schema:
    """Column-role mapping for a CSV file."""

    outcome: str
    group: str
    exposure: str
    allowable: tuple = ()
    nonallowable: tuple = ()
    auxiliary: tuple = ()

    def __post_init__(self):
        for name in ("allowable", "nonallowable", "auxiliary"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        mapped = self.mapped_columns
        dupes = sorted({c for c in mapped if mapped.count(c) > 1})
        if dupes:
            raise DataError(f"columns mapped to more than one role: {dupes}")

    @property
    def mapped_columns(self) -> list:
        return [
            self.outcome,
            self.group,
            self.exposure,
            *self.allowable,
            *self.nonallowable,
            *self.auxiliary,
        ]

    @classmethod
    def from_mapping(cls, m: Mapping) -> "Schema":
        missing = [k for k in ("outcome", "group", "exposure") if k not in m]
        if missing:
            raise DataError(f"schema is missing required keys {missing}")
        return cls(
            outcome=m["outcome"],
            group=m["group"],
            exposure=m["exposure"],
            allowable=m.get("allowable", ()),
            nonallowable=m.get("nonallowable", ()),
            auxiliary=m.get("auxiliary", ()),
        )


def load_schema(path) -> Schema:
    """Read a schema from a TOML file, either at top level or under ``[data]``."""
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    return Schema.from_mapping(cfg.get("data", cfg))


@dataclass
class LoadReport:
    n_read: int
    n_kept: int
    dropped_rows: list
    missing_by_column: dict

    @property
    def n_dropped(self) -> int:
        return len(self.dropped_rows)

    def to_dict(self) -> dict:
        return {
            "n_read": self.n_read,
            "n_kept": self.n_kept,
            "n_dropped": self.n_dropped,
            "dropped_rows": list(self.dropped_rows),
            "missing_by_column": dict(self.missing_by_column),
        }


def load_csv(path, schema: Schema | Mapping) -> tuple[DecompositionDataset, LoadReport]:
    """Load and validate a CSV file.

    Rows with a missing value in any mapped column are dropped (listwise
    deletion) and listed in the returned report. Row indices in errors and in
    the report are 0-based data-row positions (the header is not counted).
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        cols = schema.mapped_columns
        absent = [c for c in cols if c not in header]
        if absent:
            raise DataError(f"schema columns absent from header: {absent}")
        pos = {c: header.index(c) for c in cols}
        kept, dropped = [], []
        missing = {c: 0 for c in cols}
        n_read = 0
        for i, raw in enumerate(reader):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            n_read += 1
            if len(raw) != len(header):
                raise DataError(
                    f"expected {len(header)} fields, found {len(raw)}", row=i
                )
            values = {}
            row_missing = False
            for c in cols:
                cell = raw[pos[c]].strip()
                if cell.lower() in MISSING_TOKENS:
                    missing[c] += 1
                    row_missing = True
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"non-numeric value {cell!r}", row=i, column=c) from None
                if not math.isfinite(v):
                    raise DataError(f"non-finite value {cell!r}", row=i, column=c)
                if c in (schema.group, schema.exposure) and v not in (0.0, 1.0):
                    raise DataError(f"value {cell!r} is not binary 0/1", row=i, column=c)
                values[c] = v
            if row_missing:
                dropped.append(i)
                continue
            kept.append((i, values))

    def col(c):
        return np.array([v[c] for _, v in kept], dtype=float)

    n = len(kept)
    ds = DecompositionDataset(
        g=col(schema.group),
        z=col(schema.exposure),
        y=col(schema.outcome),
        x_allowable=np.column_stack([col(c) for c in schema.allowable]) if schema.allowable else np.zeros((n, 0)),
        x_nonallowable=np.column_stack([col(c) for c in schema.nonallowable]) if schema.nonallowable else np.zeros((n, 0)),
        allowable_names=schema.allowable,
        nonallowable_names=schema.nonallowable,
        aux={c: col(c) for c in schema.auxiliary},
        row_ids=np.array([i for i, _ in kept], dtype=int),
        group_name=schema.group,
        exposure_name=schema.exposure,
        outcome_name=schema.outcome,
    )
    report = LoadReport(
        n_read=n_read,
        n_kept=n,
        dropped_rows=dropped,
        missing_by_column={c: k for c, k in missing.items() if k},
    )
    return ds, report


def write_csv(ds: DecompositionDataset, path) -> None:
    header, rows = ds.to_rows()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def standardize_columns(block, names=None) -> np.ndarray:
    """Center each column to mean 0 and scale to sample variance 1 (ddof=1)."""
    block = np.asarray(block, dtype=float)
    if block.ndim == 1:
        block = block[:, None]
    if block.shape[1] == 0:
        return block.copy()
    names = names or [str(j) for j in range(block.shape[1])]
    mean = block.mean(axis=0)
    sd = block.std(axis=0, ddof=1) if block.shape[0] > 1 else np.zeros(block.shape[1])
    for j, s in enumerate(sd):
        spread = np.ptp(block[:, j])
        if not s > 0 or spread <= 1e-14 * max(1.0, abs(mean[j])):
            raise DataError("constant covariate", column=names[j])
    return (block - mean) / sd


def standardize_covariates(ds: DecompositionDataset) -> DecompositionDataset:
    """Standardize every covariate column; group, exposure and outcome are untouched."""
    return ds.replace(
        x_allowable=standardize_columns(ds.x_allowable, ds.allowable_names),
        x_nonallowable=standardize_columns(ds.x_nonallowable, ds.nonallowable_names),
    )


_PREDICATES = {
    "equals": operator.eq,
    "not_equals": operator.ne,
    "less_than": operator.lt,
    "greater_than": operator.gt,
}
_SYMBOLS = {"==": "equals", "!=": "not_equals", "<": "less_than", ">": "greater_than"}


@dataclass(frozen=True)
class RowFilter:
    """Keep rows where ``column <predicate> value`` holds (or fails, if ``exclude``)."""

    column: str
    predicate: str
    value: float
    exclude: bool = False

    def __post_init__(self):
        if self.predicate not in _PREDICATES:
            raise ValueError(
                f"predicate must be one of {sorted(_PREDICATES)}, got {self.predicate!r}"
            )

    def mask(self, ds: DecompositionDataset) -> np.ndarray:
        hit = _PREDICATES[self.predicate](ds.column(self.column), self.value)
        return ~hit if self.exclude else hit

    @classmethod
    def parse(cls, text: str, exclude: bool = False) -> "RowFilter":
        """Parse ``"col==1"``, ``"col!=0"``, ``"col<3.5"`` or ``"col>2"``."""
        m = re.fullmatch(r"\s*([^=!<>\s]+)\s*(==|!=|<|>)\s*(\S+)\s*", text)
        if not m:
            raise ValueError(f"cannot parse row filter {text!r}")
        col, sym, val = m.groups()
        return cls(col, _SYMBOLS[sym], float(val), exclude=exclude)

    def __str__(self):
        sym = {v: k for k, v in _SYMBOLS.items()}[self.predicate]
        return f"{'not ' if self.exclude else ''}{self.column}{sym}{_fmt(self.value)}"


def filter_rows(ds: DecompositionDataset, f: RowFilter) -> DecompositionDataset:
    ds.column(f.column)
    keep = np.flatnonzero(f.mask(ds))
    if keep.size == ds.n:
        return ds
    if keep.size == 0:
        raise CellCountError(f"filter {f} matches no rows")
    return ds.take(keep)


def require_cell_counts(ds: DecompositionDataset, widths: Mapping[int, int], label=None):
    """Check each (g, z) cell has at least ``width + 2`` rows for group g's model."""
    counts = ds.cell_counts()
    for gv, p in widths.items():
        for zv in (0, 1):
            if counts[(gv, zv)] < p + 2:
                raise CellCountError(
                    f"{label or f'e{gv} model'}: cell (g={gv}, z={zv}) has "
                    f"{counts[(gv, zv)]} rows, need at least {p + 2} for design width {p}"
                )


def from_arrays(
    g: Sequence,
    z: Sequence,
    y: Sequence,
    x_allowable=None,
    x_nonallowable=None,
    allowable_names: Sequence[str] | None = None,
    nonallowable_names: Sequence[str] | None = None,
) -> DecompositionDataset:
    """Convenience constructor with default ``a0, a1, ...`` / ``n0, n1, ...`` labels."""
    n = len(y)
    xa = np.zeros((n, 0)) if x_allowable is None else np.asarray(x_allowable, float).reshape(n, -1)
    xn = np.zeros((n, 0)) if x_nonallowable is None else np.asarray(x_nonallowable, float).reshape(n, -1)
    if allowable_names is None:
        allowable_names = [f"a{j}" for j in range(xa.shape[1])]
    if nonallowable_names is None:
        nonallowable_names = [f"n{j}" for j in range(xn.shape[1])]
    return DecompositionDataset(
        g=g, z=z, y=y, x_allowable=xa, x_nonallowable=xn,
        allowable_names=tuple(allowable_names), nonallowable_names=tuple(nonallowable_names),
    )
