"""Tabular datasets: CSV loading, nominal-feature encoders, min-max scaling and
stratified train/validation/test fold plans."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ParseError,
    SchemaError,
    StratificationError,
    UnsupportedStrategyError,
    ValidationError,
)

BINARY = "binary"
REGRESSION = "regression"
TASKS = (BINARY, REGRESSION)

E_OHE = "ohe"
E_COUNT = "count"
E_PROP = "prop"
ENCODINGS = (E_OHE, E_COUNT, E_PROP)

_MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True)
class FeatureKind:
    """Either numerical (``categories is None``) or nominal with its labels."""

    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.categories is not None:
            if not self.categories:
                raise ValidationError("nominal feature needs at least one category")
            if len(set(self.categories)) != len(self.categories):
                raise ValidationError(f"duplicate category labels in {self.categories}")

    @property
    def is_nominal(self) -> bool:
        return self.categories is not None

    @classmethod
    def numerical(cls) -> "FeatureKind":
        return cls(None)

    @classmethod
    def nominal(cls, categories: Sequence[str]) -> "FeatureKind":
        return cls(tuple(categories))


NUMERICAL = FeatureKind.numerical()


@dataclass(frozen=True)
class Column:
    name: str
    kind: FeatureKind
    values: np.ndarray


@dataclass(frozen=True)
class Dataset:
    columns: tuple[Column, ...]
    labels: np.ndarray | None
    task: str = BINARY

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}")
        lengths = {len(c.values) for c in self.columns}
        if self.labels is not None:
            lengths.add(len(self.labels))
        if len(lengths) > 1:
            raise ValidationError(f"columns have different lengths: {sorted(lengths)}")
        if lengths and lengths.pop() < 1:
            raise ValidationError("dataset needs at least one row")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValidationError("feature names must be unique")
        if self.labels is not None and self.task == BINARY:
            bad = ~np.isin(self.labels, (0, 1))
            if bad.any():
                raise ValidationError(
                    f"binary labels must be 0 or 1; row {int(np.argmax(bad))} has {self.labels[bad][0]!r}"
                )

    @property
    def n(self) -> int:
        if self.columns:
            return len(self.columns[0].values)
        return 0 if self.labels is None else len(self.labels)

    @property
    def d(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def is_numeric(self) -> bool:
        return not any(c.kind.is_nominal for c in self.columns)

    def matrix(self) -> np.ndarray:
        if not self.is_numeric:
            raise SchemaError("dataset still has nominal columns; encode it first")
        if not self.columns:
            return np.zeros((self.n, 0))
        return np.column_stack([np.asarray(c.values, dtype=float) for c in self.columns])

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        cols = tuple(Column(c.name, c.kind, c.values[rows]) for c in self.columns)
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(cols, labels, self.task)

    @classmethod
    def from_arrays(cls, X, y=None, names=None, task=BINARY) -> "Dataset":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValidationError("X must be two-dimensional")
        names = names or [f"x{j}" for j in range(X.shape[1])]
        cols = tuple(Column(str(nm), NUMERICAL, X[:, j].copy()) for j, nm in enumerate(names))
        labels = None if y is None else np.asarray(y, dtype=float)
        return cls(cols, labels, task)


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in _MISSING


def _parse_float(cell: str):
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_csv(
    path,
    label: str | None = "",
    task: str = BINARY,
    schema: dict[str, FeatureKind] | None = None,
) -> Dataset:
    """Read a CSV with a header row into a :class:`Dataset`.

    ``label`` names the label column; the empty string means the last column and
    None means the file has no labels (prediction input). Without ``schema`` a
    column is nominal iff one of its cells does not parse as a number. Missing
    cells are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}"
                )
            rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    if len(set(header)) != len(header):
        raise ParseError(f"{path}: duplicate column names in header")

    if label == "":
        label_idx = len(header) - 1
    elif label is None:
        label_idx = None
    else:
        if label not in header:
            raise SchemaError(f"label column {label!r} not found in {path}")
        label_idx = header.index(label)

    for i, row in enumerate(rows):
        for j, cell in enumerate(row):
            if _is_missing(cell):
                raise ValidationError(
                    f"{path}: missing value in row {i + 2}, column {header[j]!r}; impute before loading"
                )

    labels = None
    if label_idx is not None:
        labels = np.empty(len(rows))
        for i, row in enumerate(rows):
            value = _parse_float(row[label_idx])
            if value is None:
                raise ValidationError(f"{path}: row {i + 2}: label {row[label_idx]!r} is not numeric")
            labels[i] = value

    columns = []
    for j, name in enumerate(header):
        if j == label_idx:
            continue
        cells = [row[j].strip() for row in rows]
        kind = schema.get(name) if schema else None
        parsed = [_parse_float(c) for c in cells]
        if kind is None:
            if any(p is None for p in parsed):
                kind = FeatureKind.nominal(sorted(set(cells)))
            else:
                kind = NUMERICAL
        if kind.is_nominal:
            values = np.array(cells, dtype=object)
        else:
            bad = [i for i, p in enumerate(parsed) if p is None]
            if bad:
                raise ParseError(f"{path}: row {bad[0] + 2}: column {name!r} is not numeric")
            values = np.array(parsed, dtype=float)
        columns.append(Column(name, kind, values))
    return Dataset(tuple(columns), labels, task)


@dataclass(frozen=True)
class ColumnEncoding:
    name: str
    categories: tuple[str, ...] | None = None
    mapping: dict[str, float] | None = None


@dataclass(frozen=True)
class Encoder:
    """A fitted nominal-feature encoder.

    ``ohe`` expands a nominal column into one indicator per category; ``count``
    and ``prop`` replace a category by the number, or the fraction, of its rows
    labelled 1. Unseen categories become an all-zero block or 0.
    """

    strategy: str
    columns: tuple[ColumnEncoding, ...]

    @property
    def input_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def output_names(self) -> list[str]:
        names = []
        for col in self.columns:
            if col.categories is not None and self.strategy == E_OHE:
                names.extend(f"{col.name}={cat}" for cat in col.categories)
            else:
                names.append(col.name)
        return names

    def schema(self) -> dict[str, FeatureKind]:
        return {
            c.name: FeatureKind.nominal(c.categories) if c.categories is not None else NUMERICAL
            for c in self.columns
        }

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            entry = {"name": c.name, "kind": "numerical" if c.categories is None else "nominal"}
            if c.categories is not None:
                entry["categories"] = list(c.categories)
            if c.mapping is not None:
                entry["mapping"] = {k: c.mapping[k] for k in c.categories}
            cols.append(entry)
        return {"strategy": self.strategy, "columns": cols}

    @classmethod
    def from_dict(cls, doc: dict) -> "Encoder":
        cols = []
        for entry in doc["columns"]:
            cats = entry.get("categories")
            mapping = entry.get("mapping")
            cols.append(
                ColumnEncoding(
                    entry["name"],
                    None if cats is None else tuple(cats),
                    None if mapping is None else {k: float(v) for k, v in mapping.items()},
                )
            )
        if doc["strategy"] not in ENCODINGS:
            raise SchemaError(f"unknown encoding strategy {doc['strategy']!r}")
        return cls(doc["strategy"], tuple(cols))


def fit_encoder(data: Dataset, strategy: str = E_OHE) -> Encoder:
    if strategy not in ENCODINGS:
        raise UnsupportedStrategyError(f"unknown encoding strategy {strategy!r}")
    target_encoding = strategy in (E_COUNT, E_PROP)
    if target_encoding and data.task != BINARY:
        raise UnsupportedStrategyError(f"encoding {strategy!r} needs binary labels")
    if target_encoding and data.labels is None:
        raise UnsupportedStrategyError(f"encoding {strategy!r} needs labels")

    cols = []
    for col in data.columns:
        if not col.kind.is_nominal:
            cols.append(ColumnEncoding(col.name))
            continue
        cats = col.kind.categories
        mapping = None
        if target_encoding:
            mapping = {}
            for cat in cats:
                hit = col.values == cat
                positives = float(data.labels[hit].sum())
                if strategy == E_COUNT:
                    mapping[cat] = positives
                else:
                    mapping[cat] = positives / hit.sum() if hit.any() else 0.0
        cols.append(ColumnEncoding(col.name, cats, mapping))
    return Encoder(strategy, tuple(cols))


def transform(encoder: Encoder, data: Dataset) -> Dataset:
    """Apply a fitted encoder; the result has only numerical columns."""
    if encoder.input_names != data.names:
        for i, expected in enumerate(encoder.input_names):
            got = data.names[i] if i < data.d else "<missing>"
            if got != expected:
                raise SchemaError(f"column {i} is {got!r}, encoder expects {expected!r}")
        raise SchemaError(f"unexpected extra column {data.names[len(encoder.input_names)]!r}")

    out = []
    for enc, col in zip(encoder.columns, data.columns):
        if enc.categories is None:
            if col.kind.is_nominal:
                raise SchemaError(f"column {col.name!r} is nominal, encoder expects numerical")
            out.append(Column(col.name, NUMERICAL, np.asarray(col.values, dtype=float)))
            continue
        values = np.asarray(col.values).astype(str)
        if encoder.strategy == E_OHE:
            for cat in enc.categories:
                out.append(Column(f"{enc.name}={cat}", NUMERICAL, (values == cat).astype(float)))
        else:
            coded = np.array([enc.mapping.get(v, 0.0) for v in values], dtype=float)
            out.append(Column(enc.name, NUMERICAL, coded))
    return Dataset(tuple(out), data.labels, data.task)


@dataclass(frozen=True)
class MinMaxScaler:
    names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> dict:
        return {
            "columns": [
                {"name": nm, "min": float(lo), "max": float(hi)}
                for nm, lo, hi in zip(self.names, self.mins, self.maxs)
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MinMaxScaler":
        cols = doc["columns"]
        return cls(
            tuple(c["name"] for c in cols),
            np.array([c["min"] for c in cols], dtype=float),
            np.array([c["max"] for c in cols], dtype=float),
        )


def fit_scaler(data: Dataset) -> MinMaxScaler:
    X = data.matrix()
    return MinMaxScaler(tuple(data.names), X.min(axis=0), X.max(axis=0))


def scale_matrix(scaler: MinMaxScaler, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    span = scaler.maxs - scaler.mins
    constant = span == 0
    out = (X - scaler.mins) / np.where(constant, 1.0, span)
    out[:, constant] = 0.0
    return out


def scale(scaler: MinMaxScaler, data: Dataset) -> Dataset:
    """Min-max scale with the fitted ranges; held-out values are not clipped."""
    if tuple(data.names) != scaler.names:
        raise SchemaError("scaler was fitted on different columns")
    X = scale_matrix(scaler, data.matrix())
    return Dataset.from_arrays(X, data.labels, data.names, data.task)


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]
    seed: int | None = None
    n: int = field(default=0)

    @property
    def k(self) -> int:
        return len(self.folds)

    def to_json(self) -> str:
        return json.dumps(
            [
                {"train": f.train.tolist(), "val": f.val.tolist(), "test": f.test.tolist()}
                for f in self.folds
            ]
        )


def _deal(groups, k, offset=0):
    """Deal the concatenated groups round-robin into k buckets."""
    buckets = [[] for _ in range(k)]
    pos = offset
    for group in groups:
        for idx in group:
            buckets[pos % k].append(int(idx))
            pos += 1
    return buckets


def make_folds(n: int, k: int = 10, labels=None, seed: int = 0, stratify: bool = True) -> FoldPlan:
    """Stratified k-fold test partition with a 1/9 validation slice per fold.

    Each class's indices are shuffled and dealt round-robin over the folds, so
    test folds partition ``range(n)``. Within each fold's remaining indices a
    stratified ninth becomes validation, giving roughly 80/10/10 splits.
    """
    if k < 2:
        raise StratificationError("need at least 2 folds")
    if n < k:
        raise StratificationError(f"cannot make {k} folds from {n} samples")
    rng = np.random.default_rng(seed)

    if labels is not None and stratify:
        labels = np.asarray(labels)
        if len(labels) != n:
            raise StratificationError("labels length differs from n")
        classes = np.unique(labels)
        groups = []
        for c in classes:
            members = np.flatnonzero(labels == c)
            if members.size < k:
                raise StratificationError(
                    f"class {c!r} has {members.size} samples, fewer than {k} folds"
                )
            groups.append(rng.permutation(members))
    else:
        labels = np.zeros(n)
        groups = [rng.permutation(n)]

    test_sets = [np.sort(np.array(b, dtype=int)) for b in _deal(groups, k)]
    folds = []
    for test in test_sets:
        rest = np.setdiff1d(np.arange(n), test)
        val = []
        for c in np.unique(labels[rest]):
            members = rng.permutation(rest[labels[rest] == c])
            val.extend(members[: int(round(members.size / 9))].tolist())
        val = np.sort(np.array(val, dtype=int))
        train = np.setdiff1d(rest, val)
        folds.append(Fold(train, val, test))
    return FoldPlan(tuple(folds), seed, n)


def load_fold_file(path, n: int | None = None) -> FoldPlan:
    """Read a JSON list of ``{"train", "val", "test"}`` index objects."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: cannot read fold file: {exc}") from exc
    if not isinstance(doc, list) or not doc:
        raise ParseError(f"{path}: fold file must be a non-empty JSON array")
    folds = []
    for i, entry in enumerate(doc):
        try:
            fold = Fold(*(np.asarray(entry[key], dtype=int) for key in ("train", "val", "test")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: fold {i} is malformed: {exc}") from exc
        if n is not None:
            for part in (fold.train, fold.val, fold.test):
                if part.size and (part.min() < 0 or part.max() >= n):
                    raise ValidationError(f"{path}: fold {i} has indices outside [0, {n})")
        folds.append(fold)
    return FoldPlan(tuple(folds), None, n or 0)
