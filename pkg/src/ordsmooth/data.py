"""Tabular data ingestion and stage coding.

Observed stages are kept as integer categories 1..K under an explicit,
user-supplied ordered label list; ordering is domain knowledge and is never
inferred from string sort order.  Values are immutable after loading.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import CodingError, ParseError, SchemaError


@dataclass(frozen=True)
class StageCoding:
    """Ordered stage labels and the bijective label -> 1-based index map."""

    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) < 2:
            raise SchemaError("stage coding needs at least 2 labels")
        if len(set(self.labels)) != len(self.labels):
            raise SchemaError("stage labels must be unique")

    @property
    def K(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label) + 1
        except ValueError:
            raise CodingError(f"stage label {label!r} not in coding {self.labels}") from None

    def label(self, index: int) -> str:
        if not 1 <= index <= self.K:
            raise CodingError(f"stage index {index} outside 1..{self.K}")
        return self.labels[index - 1]


@dataclass(frozen=True)
class Observation:
    """One row: observed stage index plus its covariate and factor values."""

    stage: int
    covariates: Mapping[str, float]
    factors: Mapping[str, str]


@dataclass(frozen=True)
class Dataset:
    """Column-oriented set of ordered-categorical observations.

    ``stage`` holds integer categories 1..K, ``covariates`` maps names to
    float arrays and ``factors`` maps names to label arrays whose levels are
    registered (first-appearance order) in ``factor_levels``.
    """

    stage: np.ndarray
    stage_coding: StageCoding
    covariates: dict[str, np.ndarray] = field(default_factory=dict)
    factors: dict[str, np.ndarray] = field(default_factory=dict)
    factor_levels: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        stage = np.asarray(self.stage, dtype=int)
        object.__setattr__(self, "stage", stage)
        if stage.ndim != 1:
            raise SchemaError("stage must be a 1-d integer vector")
        if stage.size and (stage.min() < 1 or stage.max() > self.K):
            raise CodingError(f"stage indices must lie in 1..{self.K}")
        for name, col in self.covariates.items():
            col = np.asarray(col, dtype=float)
            self.covariates[name] = col
            if col.shape != stage.shape:
                raise SchemaError(f"covariate {name!r} length mismatch")
            if not np.all(np.isfinite(col)):
                raise ParseError(f"covariate {name!r} contains non-finite values")
        levels = dict(self.factor_levels)
        for name, col in self.factors.items():
            col = np.asarray(col, dtype=object)
            self.factors[name] = col
            if col.shape != stage.shape:
                raise SchemaError(f"factor {name!r} length mismatch")
            if name not in levels:
                levels[name] = _first_appearance_levels(col)
            known = set(levels[name])
            for value in col:
                if value not in known:
                    raise CodingError(f"factor {name!r} has unregistered level {value!r}")
        object.__setattr__(self, "factor_levels", levels)

    @property
    def n(self) -> int:
        return self.stage.size

    @property
    def K(self) -> int:
        return self.stage_coding.K

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(self.covariates) + tuple(self.factors)

    def row(self, i: int) -> Observation:
        return Observation(
            stage=int(self.stage[i]),
            covariates={k: float(v[i]) for k, v in self.covariates.items()},
            factors={k: str(v[i]) for k, v in self.factors.items()},
        )

    def __iter__(self) -> Iterator[Observation]:
        return (self.row(i) for i in range(self.n))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            stage=self.stage[idx],
            stage_coding=self.stage_coding,
            covariates={k: v[idx] for k, v in self.covariates.items()},
            factors={k: v[idx] for k, v in self.factors.items()},
            factor_levels=dict(self.factor_levels),
        )

    def with_covariate(self, name: str, values: np.ndarray) -> "Dataset":
        cov = dict(self.covariates)
        cov[name] = np.asarray(values, dtype=float)
        return replace(self, covariates=cov)


def _first_appearance_levels(col: np.ndarray) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for value in col:
        seen.setdefault(value, None)
    return tuple(seen)


@dataclass(frozen=True)
class ColumnSchema:
    """Column-role map for delimited-text ingestion.

    ``count``, when given, names a column of per-row counts; each row is
    expanded into that many identical observations (long format).
    """

    stage: str
    stage_labels: Sequence[str]
    covariates: Sequence[str] = ()
    factors: Sequence[str] = ()
    count: str | None = None
    delimiter: str = ","


def load_dataset(path: str | Path, schema: ColumnSchema) -> Dataset:
    """Read a delimited text file (header row required, UTF-8) into a Dataset.

    Rows keep file order.  Missing columns raise SchemaError, unknown stage
    labels raise CodingError and non-numeric covariate cells raise ParseError,
    all naming the offending row (1-based, excluding the header).
    """
    path = Path(path)
    coding = StageCoding(tuple(schema.stage_labels))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=schema.delimiter)
        header = reader.fieldnames or []
        needed = [schema.stage, *schema.covariates, *schema.factors]
        if schema.count is not None:
            needed.append(schema.count)
        for col in needed:
            if col not in header:
                raise SchemaError(f"column {col!r} missing from {path.name} (header: {header})")
        stages: list[int] = []
        covs: dict[str, list[float]] = {c: [] for c in schema.covariates}
        facs: dict[str, list[str]] = {f: [] for f in schema.factors}
        for rownum, row in enumerate(reader, start=1):
            label = row[schema.stage]
            if label is None or label == "":
                raise ParseError(f"row {rownum}: empty stage cell")
            try:
                stage = coding.index(label)
            except CodingError:
                raise CodingError(
                    f"row {rownum}: stage label {label!r} not in coding {coding.labels}"
                ) from None
            repeats = 1
            if schema.count is not None:
                repeats = _parse_count(row[schema.count], rownum, schema.count)
            values = {}
            for c in schema.covariates:
                cell = row[c]
                try:
                    values[c] = float(cell)
                except (TypeError, ValueError):
                    raise ParseError(f"row {rownum}: non-numeric value {cell!r} in column {c!r}") from None
                if not np.isfinite(values[c]):
                    raise ParseError(f"row {rownum}: non-finite value in column {c!r}")
            for _ in range(repeats):
                stages.append(stage)
                for c in schema.covariates:
                    covs[c].append(values[c])
                for f in schema.factors:
                    facs[f].append(row[f])
    return Dataset(
        stage=np.asarray(stages, dtype=int),
        stage_coding=coding,
        covariates={k: np.asarray(v, dtype=float) for k, v in covs.items()},
        factors={k: np.asarray(v, dtype=object) for k, v in facs.items()},
    )


def _parse_count(cell, rownum: int, colname: str) -> int:
    try:
        value = float(cell)
    except (TypeError, ValueError):
        raise ParseError(f"row {rownum}: non-numeric count {cell!r} in column {colname!r}") from None
    if value < 0 or value != int(value):
        raise ParseError(f"row {rownum}: count must be a non-negative integer, got {cell!r}")
    return int(value)


def write_dataset(d: Dataset, path: str | Path, stage_column: str = "stage",
                  delimiter: str = ",", extra: Mapping[str, np.ndarray] | None = None) -> None:
    """Write a Dataset back to delimited text; reloading round-trips exactly.

    Floats are written with ``repr`` so their bit patterns survive the trip.
    ``extra`` appends sidecar numeric columns (e.g. a recorded true linear
    predictor) that are not part of the Dataset itself.
    """
    extra = dict(extra or {})
    header = [stage_column, *d.covariates, *d.factors, *extra]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(header)
        for i in range(d.n):
            row = [d.stage_coding.label(int(d.stage[i]))]
            row += [repr(float(d.covariates[c][i])) for c in d.covariates]
            row += [str(d.factors[f][i]) for f in d.factors]
            row += [repr(float(extra[e][i])) for e in extra]
            writer.writerow(row)


def schema_for(d: Dataset, stage_column: str = "stage", delimiter: str = ",") -> ColumnSchema:
    """Schema that reloads a file written by :func:`write_dataset`."""
    return ColumnSchema(
        stage=stage_column,
        stage_labels=d.stage_coding.labels,
        covariates=tuple(d.covariates),
        factors=tuple(d.factors),
        delimiter=delimiter,
    )


def derive_day_offset(d: Dataset, group: str, day: str, name: str = "dffs") -> Dataset:
    """Add ``name`` = day minus the within-group minimum of ``day``.

    Aligns groups (typically years) on their first sampled day: the offset is
    non-negative and every group contains at least one exact zero.
    """
    if day not in d.covariates:
        raise SchemaError(f"day column {day!r} is not a covariate of the dataset")
    if group not in d.factors:
        raise SchemaError(f"group column {group!r} is not a factor of the dataset")
    days = d.covariates[day]
    offsets = np.empty_like(days)
    groups = d.factors[group]
    for level in d.factor_levels[group]:
        mask = groups == level
        if mask.any():
            offsets[mask] = days[mask] - days[mask].min()
    return d.with_covariate(name, offsets)
