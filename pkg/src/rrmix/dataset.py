"""Typed tabular data: declared measurement levels, CSV ingestion, encodings.

Variables carry a role (predictor/response) and a level (numeric, binary,
nominal, ordinal).  Non-numeric columns are stored as integer codes against
the schema's ordered category list; binary columns are stored as 0/1.
Datasets are immutable after load and safe to share across workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROLES = ("predictor", "response")
LEVELS = ("numeric", "binary", "nominal", "ordinal")


class SchemaError(ValueError):
    """Schema file or schema/data contract violation."""


class DataError(ValueError):
    """Malformed or inconsistent data values."""


@dataclass(frozen=True)
class VariableSchema:
    """One declared variable: name, role, level and (if discrete) categories."""

    name: str
    role: str
    level: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"variable {self.name!r}: unknown role {self.role!r}")
        if self.level not in LEVELS:
            raise SchemaError(f"variable {self.name!r}: unknown level {self.level!r}")
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.level == "numeric":
            if self.categories:
                raise SchemaError(f"numeric variable {self.name!r} must not declare categories")
        else:
            if len(self.categories) < 2:
                raise SchemaError(f"variable {self.name!r}: non-numeric variables need >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"variable {self.name!r}: duplicate categories")
            if self.level == "binary" and len(self.categories) != 2:
                raise SchemaError(f"binary variable {self.name!r} must have exactly 2 categories")
        if self.role == "response":
            if self.level == "nominal":
                raise SchemaError(f"variable {self.name!r}: nominal responses are not supported")
            if self.level == "binary" and self.categories != ("0", "1"):
                raise SchemaError(
                    f"binary response {self.name!r} must be coded 0/1 "
                    f'(categories ["0", "1"]), got {list(self.categories)}'
                )

    @property
    def n_categories(self) -> int:
        return len(self.categories)


def validate_schema(schema: list[VariableSchema]) -> list[VariableSchema]:
    """Check cross-variable invariants and return the schema unchanged."""
    names = [v.name for v in schema]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise SchemaError(f"duplicate variable names: {dupes}")
    if not any(v.role == "predictor" for v in schema):
        raise SchemaError("schema declares no predictors")
    if not any(v.role == "response" for v in schema):
        raise SchemaError("schema declares no responses")
    return schema


def load_schema(path: str | Path) -> list[VariableSchema]:
    """Read a schema file: {"variables": [{name, role, level, categories[]}]}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "variables" not in raw:
        raise SchemaError(f"{path}: expected a top-level 'variables' list")
    schema = []
    for entry in raw["variables"]:
        unknown = set(entry) - {"name", "role", "level", "categories"}
        if unknown:
            raise SchemaError(f"{path}: unknown schema fields {sorted(unknown)}")
        schema.append(
            VariableSchema(
                name=entry["name"],
                role=entry["role"],
                level=entry["level"],
                categories=tuple(entry.get("categories", ())),
            )
        )
    return validate_schema(schema)


def schema_to_dict(schema: list[VariableSchema]) -> dict:
    return {
        "variables": [
            {"name": v.name, "role": v.role, "level": v.level, "categories": list(v.categories)}
            for v in schema
        ]
    }


def schema_hash(schema: list[VariableSchema]) -> str:
    """Stable digest of the schema (used to tag fitted-model files)."""
    canon = json.dumps(schema_to_dict(schema), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Dataset:
    """Validated columns plus their schema.  Immutable; rows indexed 0..N-1.

    Storage: numeric -> float array; binary -> 0/1 int array; nominal and
    ordinal -> 1..C integer codes in schema category order.
    """

    schema: tuple[VariableSchema, ...]
    columns: dict[str, np.ndarray]
    n: int = field(init=False)

    def __post_init__(self):
        lengths = {len(col) for col in self.columns.values()}
        if len(lengths) != 1:
            raise DataError(f"columns have unequal lengths: {sorted(lengths)}")
        object.__setattr__(self, "n", lengths.pop())
        for col in self.columns.values():
            col.setflags(write=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def variable(self, name: str) -> VariableSchema:
        for v in self.schema:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def predictors(self) -> list[VariableSchema]:
        return [v for v in self.schema if v.role == "predictor"]

    @property
    def responses(self) -> list[VariableSchema]:
        return [v for v in self.schema if v.role == "response"]

    @property
    def n_predictors(self) -> int:
        return len(self.predictors)

    @property
    def n_responses(self) -> int:
        return len(self.responses)

    def response_indices(self, level: str) -> np.ndarray:
        """Positions (in response order) of responses with the given level."""
        return np.array([j for j, v in enumerate(self.responses) if v.level == level], dtype=int)

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Row subset/resample.  Category coverage is *not* revalidated here;
        downstream fits raise if a resample empties a category."""
        indices = np.asarray(indices, dtype=int)
        cols = {name: col[indices].copy() for name, col in self.columns.items()}
        return Dataset(schema=self.schema, columns=cols)


def _code_cell(var: VariableSchema, cell: str, row: int) -> float | int:
    if var.level == "numeric":
        try:
            return float(cell)
        except ValueError:
            raise DataError(
                f"row {row}, column {var.name!r}: cannot parse {cell!r} as numeric"
            ) from None
    if cell not in var.categories:
        raise DataError(
            f"row {row}, column {var.name!r}: category {cell!r} is not in the schema "
            f"(declared: {list(var.categories)})"
        )
    idx = var.categories.index(cell)
    return idx if var.level == "binary" else idx + 1


def load_dataset(csv_path: str | Path, schema: list[VariableSchema]) -> Dataset:
    """Load and validate a CSV (header row required) against a schema.

    Raises DataError naming the offending row/column for missing cells,
    unparseable numerics, and categories absent from the schema; raises
    after load for declared categories that never occur in the data.
    """
    schema = validate_schema(list(schema))
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{csv_path}: empty file") from None
        rows = list(reader)

    names = [v.name for v in schema]
    if set(header) != set(names):
        missing = sorted(set(names) - set(header))
        extra = sorted(set(header) - set(names))
        raise SchemaError(
            f"{csv_path}: header does not match schema (missing {missing}, unexpected {extra})"
        )
    pos = {name: header.index(name) for name in names}

    raw_cols: dict[str, list] = {name: [] for name in names}
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {i}: expected {len(header)} cells, got {len(row)}")
        for var in schema:
            cell = row[pos[var.name]].strip()
            if cell == "":
                raise DataError(f"row {i}, column {var.name!r}: missing value")
            raw_cols[var.name].append(_code_cell(var, cell, i))
    if not rows:
        raise DataError(f"{csv_path}: no data rows")

    columns = {}
    for var in schema:
        vals = raw_cols[var.name]
        if var.level == "numeric":
            columns[var.name] = np.asarray(vals, dtype=float)
        else:
            col = np.asarray(vals, dtype=int)
            lo = 0 if var.level == "binary" else 1
            observed = set(col.tolist())
            absent = [var.categories[c - lo] for c in range(lo, lo + var.n_categories) if c not in observed]
            if absent:
                raise DataError(
                    f"column {var.name!r}: declared categories never observed: {absent}"
                )
            columns[var.name] = col
    return Dataset(schema=tuple(schema), columns=columns)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a Dataset back to CSV (labels restored); round-trips exactly."""
    names = [v.name for v in dataset.schema]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(dataset.n):
            row = []
            for var in dataset.schema:
                val = dataset[var.name][i]
                if var.level == "numeric":
                    row.append(repr(float(val)))
                elif var.level == "binary":
                    row.append(var.categories[int(val)])
                else:
                    row.append(var.categories[int(val) - 1])
            writer.writerow(row)


@dataclass(frozen=True)
class IndicatorMatrix:
    """One-hot expansion of a discrete column with per-category counts."""

    matrix: np.ndarray          # N x C, 0/1
    category_counts: np.ndarray  # length C

    @property
    def n_categories(self) -> int:
        return self.matrix.shape[1]


def build_indicator(dataset: Dataset, var_name: str) -> IndicatorMatrix:
    """One-hot indicator matrix for a non-numeric predictor.

    Raises DataError on empty categories (can happen on resampled subsets)
    and on numeric variables.
    """
    var = dataset.variable(var_name)
    if var.level == "numeric":
        raise DataError(f"variable {var_name!r} is numeric; no indicator matrix")
    col = dataset[var_name]
    codes = col if var.level != "binary" else col + 1  # unify to 1..C
    C = var.n_categories
    G = np.zeros((dataset.n, C))
    G[np.arange(dataset.n), codes - 1] = 1.0
    counts = G.sum(axis=0)
    if np.any(counts == 0):
        empty = [var.categories[c] for c in np.flatnonzero(counts == 0)]
        raise DataError(f"variable {var_name!r}: empty categories {empty}")
    return IndicatorMatrix(matrix=G, category_counts=counts)


def standardize(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Center and scale to mean 0, variance 1 (population N divisor).

    Returns (standardized, mean, sd); the stats are retained for applying
    the same transformation to new data.  Raises on constant input.
    """
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    sd = float(values.std())  # ddof=0: population divisor
    if sd == 0.0:
        raise DataError("cannot standardize a constant column")
    return (values - mean) / sd, mean, sd


@dataclass(frozen=True)
class ResponseEncoding:
    """Signed codes for binary responses and one-hot stacks for ordinal ones.

    q columns follow the order of binary responses in the schema; g maps each
    ordinal response name to its N x C_r one-hot matrix.
    """

    q: np.ndarray                     # N x n_binary with entries in {-1, +1}
    g: dict[str, np.ndarray]          # ordinal name -> N x C_r one-hot


def response_encoding(dataset: Dataset) -> ResponseEncoding:
    binary = [v for v in dataset.responses if v.level == "binary"]
    ordinal = [v for v in dataset.responses if v.level == "ordinal"]
    if binary:
        q = np.column_stack([2 * dataset[v.name] - 1 for v in binary]).astype(float)
    else:
        q = np.zeros((dataset.n, 0))
    g = {}
    for v in ordinal:
        col = dataset[v.name]
        G = np.zeros((dataset.n, v.n_categories))
        G[np.arange(dataset.n), col - 1] = 1.0
        g[v.name] = G
    return ResponseEncoding(q=q, g=g)
