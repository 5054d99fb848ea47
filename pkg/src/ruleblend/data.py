"""Tabular data handling: CSV ingestion, rough imputation, response scaling, splits.

Datasets hold features in a single float matrix. Numeric columns store raw
values (NaN where missing); categorical columns store integer level codes cast
to float, with -1 marking a missing cell and -2 a level unseen at training
time. A boolean mask carries missingness alongside, so imputation can fill
values without losing track of which cells were observed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, SchemaError

NUMERIC = "numeric"
CATEGORICAL = "categorical"

MISSING_LEVEL = -1.0
UNSEEN_LEVEL = -2.0


@dataclass(frozen=True)
class Feature:
    """One column of the feature schema.

    Parameters
    ----------
    name : str
        Column name from the CSV header.
    kind : str
        Either ``"numeric"`` or ``"categorical"``.
    levels : tuple of str
        Level names for categorical columns, in code order. Empty for numeric.
    """

    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            d["levels"] = list(self.levels)
        return d

    @staticmethod
    def from_dict(d: dict) -> "Feature":
        return Feature(d["name"], d["kind"], tuple(d.get("levels", ())))


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature descriptions plus the target column name, if any."""

    features: tuple[Feature, ...]
    target: str | None = None

    @property
    def p(self) -> int:
        return len(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def index_of(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaError(f"unknown feature {name!r}")

    def to_dict(self) -> dict:
        return {
            "features": [f.to_dict() for f in self.features],
            "target": self.target,
        }

    @staticmethod
    def from_dict(d: dict) -> "FeatureSchema":
        feats = tuple(Feature.from_dict(f) for f in d["features"])
        return FeatureSchema(feats, d.get("target"))


@dataclass(frozen=True, eq=False)
class Dataset:
    """An in-memory table: schema, feature matrix, missingness mask, response.

    ``values`` is (n, p) float64. ``missing`` is (n, p) bool and stays truthful
    after imputation fills ``values``. ``response`` is a length-n float vector,
    or None for prediction-only tables.
    """

    schema: FeatureSchema
    values: np.ndarray
    missing: np.ndarray
    response: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def check(self) -> None:
        if self.values.ndim != 2:
            raise DataError("values must be a 2-d array")
        if self.missing.shape != self.values.shape:
            raise DataError("missing mask shape does not match values")
        if self.schema.p != self.values.shape[1]:
            raise DataError("schema width does not match values")
        if self.response is not None and len(self.response) != self.n:
            raise DataError("response length does not match row count")

    def take(self, rows: np.ndarray) -> "Dataset":
        """Row subset sharing this dataset's schema (and level tables)."""
        resp = None if self.response is None else self.response[rows]
        return Dataset(self.schema, self.values[rows], self.missing[rows], resp)


@dataclass(frozen=True)
class ResponseScaler:
    """Affine response map y -> (y - center) / scale and its inverse."""

    center: float
    scale: float

    def transform(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, float) - self.center) / self.scale

    def inverse(self, y_std: np.ndarray | float):
        return y_std * self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": self.center, "scale": self.scale}

    @staticmethod
    def from_dict(d: dict) -> "ResponseScaler":
        return ResponseScaler(float(d["center"]), float(d["scale"]))


IDENTITY_SCALER = ResponseScaler(0.0, 1.0)


# ---- CSV ingestion ----------------------------------------------------------


def _read_table(path: str) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty (a header row is required)")
    header, body = rows[0], rows[1:]
    if not body:
        raise DataError(f"{path} has a header but no data rows")
    width = len(header)
    for i, row in enumerate(body):
        if len(row) != width:
            raise DataError(f"{path} row {i + 2} has {len(row)} cells, expected {width}")
    return header, body


def _is_missing(cell: str, na_string: str) -> bool:
    return cell == "" or cell == na_string


def _parses_as_float(cell: str) -> bool:
    try:
        v = float(cell)
    except ValueError:
        return False
    return math.isfinite(v)


def load_csv(path: str, target: str, na_string: str = "NA",
             kind_hints: dict[str, str] | None = None) -> Dataset:
    """Load a training table from an RFC-4180 CSV file with a header row.

    Column types are auto-detected: a column whose observed cells all parse as
    finite floats is numeric, anything else categorical (level codes assigned
    in sorted level-name order). ``kind_hints`` maps column names to explicit
    kinds and overrides detection. Missing cells are the empty string or
    ``na_string``. The target column must exist, parse as numeric, and contain
    no missing values.
    """
    header, body = _read_table(path)
    if target not in header:
        raise DataError(f"target column {target!r} not found in {path}")
    if len(header) < 2:
        raise DataError(f"{path} has no feature columns besides the target")
    tcol = header.index(target)
    hints = kind_hints or {}

    n = len(body)
    resp = np.empty(n)
    for i, row in enumerate(body):
        cell = row[tcol]
        if _is_missing(cell, na_string):
            raise DataError(f"missing response value at row {i + 2}")
        if not _parses_as_float(cell):
            raise DataError(f"non-numeric response {cell!r} at row {i + 2}")
        resp[i] = float(cell)

    feat_cols = [j for j in range(len(header)) if j != tcol]
    features = []
    columns = []
    mask_cols = []
    for j in feat_cols:
        name = header[j]
        cells = [row[j] for row in body]
        miss = np.array([_is_missing(c, na_string) for c in cells], dtype=bool)
        observed = [c for c, m in zip(cells, miss) if not m]
        kind = hints.get(name)
        if kind is None:
            kind = NUMERIC if all(_parses_as_float(c) for c in observed) else CATEGORICAL
        elif kind not in (NUMERIC, CATEGORICAL):
            raise DataError(f"unknown kind hint {kind!r} for column {name!r}")
        col = np.empty(n)
        if kind == NUMERIC:
            for i, (c, m) in enumerate(zip(cells, miss)):
                if m:
                    col[i] = np.nan
                elif _parses_as_float(c):
                    col[i] = float(c)
                else:
                    raise DataError(f"non-numeric cell {c!r} in numeric column {name!r} row {i + 2}")
            features.append(Feature(name, NUMERIC))
        else:
            levels = tuple(sorted(set(observed)))
            code = {lv: k for k, lv in enumerate(levels)}
            for i, (c, m) in enumerate(zip(cells, miss)):
                col[i] = MISSING_LEVEL if m else code[c]
            features.append(Feature(name, CATEGORICAL, levels))
        columns.append(col)
        mask_cols.append(miss)

    values = np.column_stack(columns)
    missing = np.column_stack(mask_cols)
    ds = Dataset(FeatureSchema(tuple(features), target), values, missing, resp)
    ds.check()
    return ds


def load_with_schema(path: str, schema: FeatureSchema, na_string: str = "NA") -> Dataset:
    """Load a table against a known schema, e.g. rows to predict for.

    Feature columns are matched by name; extra columns (including the original
    target) are ignored, absent feature columns raise. Categorical cells with
    level names outside the training table are coded as unseen (they satisfy
    no level-subset constraint but are not missing). The response is populated
    when the schema's target column is present and fully numeric, else None.
    """
    header, body = _read_table(path)
    n = len(body)
    col_index = {}
    for f in schema.features:
        if f.name not in header:
            raise SchemaError(f"feature column {f.name!r} not found in {path}")
        col_index[f.name] = header.index(f.name)

    values = np.empty((n, schema.p))
    missing = np.zeros((n, schema.p), dtype=bool)
    for k, f in enumerate(schema.features):
        j = col_index[f.name]
        for i, row in enumerate(body):
            cell = row[j]
            if _is_missing(cell, na_string):
                missing[i, k] = True
                values[i, k] = np.nan if f.kind == NUMERIC else MISSING_LEVEL
            elif f.kind == NUMERIC:
                if not _parses_as_float(cell):
                    raise DataError(f"non-numeric cell {cell!r} in column {f.name!r} row {i + 2}")
                values[i, k] = float(cell)
            else:
                try:
                    values[i, k] = f.levels.index(cell)
                except ValueError:
                    values[i, k] = UNSEEN_LEVEL

    resp = None
    if schema.target is not None and schema.target in header:
        tcol = header.index(schema.target)
        cells = [row[tcol] for row in body]
        if all(not _is_missing(c, na_string) and _parses_as_float(c) for c in cells):
            resp = np.array([float(c) for c in cells])

    ds = Dataset(schema, values, missing, resp)
    ds.check()
    return ds


# ---- transforms -------------------------------------------------------------


def degenerate_columns(ds: Dataset) -> list[str]:
    """Names of feature columns with no observed value at all."""
    fully = ds.missing.all(axis=0)
    return [f.name for f, d in zip(ds.schema.features, fully) if d]


def impute_rough(ds: Dataset) -> Dataset:
    """Fill missing cells with the column median (numeric) or mode (categorical).

    The mode resolves ties toward the lowest level code. Columns with no
    observed values are filled with 0 (numeric) or level 0 (categorical); the
    caller can detect those through :func:`degenerate_columns`. The missing
    mask is preserved, which makes the operation idempotent: medians and modes
    are always computed over the originally observed cells.
    """
    values = ds.values.copy()
    for j, feat in enumerate(ds.schema.features):
        miss = ds.missing[:, j]
        if not miss.any():
            continue
        observed = ds.values[~miss, j]
        if observed.size == 0:
            fill = 0.0
        elif feat.kind == NUMERIC:
            fill = float(np.median(observed))
        else:
            counts = np.bincount(observed.astype(np.int64))
            fill = float(np.argmax(counts))
        values[miss, j] = fill
    out = Dataset(ds.schema, values, ds.missing, ds.response)
    out.check()
    return out


def standardize_response(y: np.ndarray) -> tuple[np.ndarray, ResponseScaler]:
    """Center and scale a response to mean 0, sample (n-1) variance 1.

    A constant response gets scale 1 so the transform stays invertible.
    """
    y = np.asarray(y, float)
    if y.ndim != 1 or len(y) < 2:
        raise DataError("response standardization needs a vector of length >= 2")
    center = float(np.mean(y))
    sd = float(np.std(y, ddof=1))
    scale = sd if sd > 0.0 else 1.0
    scaler = ResponseScaler(center, scale)
    return scaler.transform(y), scaler


def split_half(ds: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Split rows into train/test halves via a seeded permutation.

    The first ceil(n/2) permuted rows form the training half. Row order within
    each half follows the permutation.
    """
    if ds.n < 4:
        raise DataError("need at least 4 rows to split in half")
    perm = np.random.default_rng(seed).permutation(ds.n)
    k = math.ceil(ds.n / 2)
    return ds.take(perm[:k]), ds.take(perm[k:])


def add_noise(y: np.ndarray, factor: float, seed: int) -> np.ndarray:
    """Add centered Gaussian noise with variance ``factor`` times Var(y).

    Var(y) is the sample (n-1) variance. ``factor`` 0, or a constant y,
    returns an unchanged copy.
    """
    y = np.asarray(y, float)
    if factor < 0:
        raise DataError("noise factor must be nonnegative")
    var = float(np.var(y, ddof=1)) if len(y) > 1 else 0.0
    if factor == 0.0 or var == 0.0:
        return y.copy()
    rng = np.random.default_rng(seed)
    return y + rng.normal(0.0, math.sqrt(factor * var), len(y))


def dataset_from_arrays(x: np.ndarray, y: np.ndarray | None = None,
                        names: list[str] | None = None) -> Dataset:
    """Wrap a fully numeric feature matrix (NaN = missing) as a Dataset."""
    x = np.atleast_2d(np.asarray(x, float))
    p = x.shape[1]
    names = names or [f"x{j + 1}" for j in range(p)]
    feats = tuple(Feature(nm, NUMERIC) for nm in names)
    schema = FeatureSchema(feats, "y" if y is not None else None)
    missing = np.isnan(x)
    resp = None if y is None else np.asarray(y, float)
    ds = Dataset(schema, x, missing, resp)
    ds.check()
    return ds
