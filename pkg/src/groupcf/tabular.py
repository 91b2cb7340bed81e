"""Schema, dataset ingestion, splitting and training-set feature statistics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import (
    DegenerateSplit,
    InputError,
    MalformedNumber,
    MissingColumn,
    SchemaError,
    SchemaMismatch,
    UnknownCategory,
)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
LABEL_COLUMN = "label"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    actionable: bool = True
    display: str | None = None

    def __post_init__(self):
        if not self.name:
            raise SchemaError("feature name must be non-empty")
        if self.kind == CATEGORICAL:
            if len(set(self.categories)) < 2 or len(set(self.categories)) != len(self.categories):
                raise SchemaError(
                    f"categorical feature {self.name!r} needs >= 2 distinct categories"
                )
        elif self.kind == CONTINUOUS:
            if self.categories:
                raise SchemaError(f"continuous feature {self.name!r} cannot list categories")
        else:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def label(self) -> str:
        return self.display or self.name

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind, "actionable": self.actionable}
        if self.categories:
            d["categories"] = list(self.categories)
        if self.display:
            d["display"] = self.display
        return d


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureSpec, ...]
    class_names: tuple[str, str]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if LABEL_COLUMN in names:
            raise SchemaError(f"{LABEL_COLUMN!r} is reserved for the class column")
        if len(self.class_names) != 2 or self.class_names[0] == self.class_names[1]:
            raise SchemaError("schema needs exactly two distinct class names")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "FeatureSchema":
        try:
            feats = tuple(
                FeatureSpec(
                    name=f["name"],
                    kind=f["kind"],
                    categories=tuple(f.get("categories", ())),
                    actionable=bool(f.get("actionable", True)),
                    display=f.get("display"),
                )
                for f in doc["features"]
            )
            classes = tuple(doc["classes"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
        return cls(feats, classes)  # type: ignore[arg-type]

    @classmethod
    def from_json(cls, path: str | Path) -> "FeatureSchema":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"schema file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict[str, Any]:
        return {"classes": list(self.class_names), "features": [f.to_dict() for f in self.features]}

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index(self, name: str) -> int:
        try:
            return self._index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise SchemaMismatch(f"no feature named {name!r}") from None

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([f.is_categorical for f in self.features], dtype=bool)

    @property
    def actionable_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.actionable]

    def class_index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise UnknownCategory(LABEL_COLUMN, name) from None

    def encode(self, feature: str, value: str) -> int:
        spec = self.features[self.index(feature)]
        try:
            return spec.categories.index(value)
        except ValueError:
            raise UnknownCategory(feature, value) from None

    def decode(self, feature: str, index: int) -> str:
        spec = self.features[self.index(feature)]
        if not 0 <= index < len(spec.categories):
            raise SchemaMismatch(f"{feature!r}: category index {index} out of range")
        return spec.categories[index]

    def check_instance(self, x: Sequence[float]) -> np.ndarray:
        """Return ``x`` as a float vector, raising SchemaMismatch if it does not conform."""
        arr = np.asarray(x, dtype=float)
        if arr.shape != (len(self.features),):
            raise SchemaMismatch(
                f"instance has shape {arr.shape}, schema has {len(self.features)} features"
            )
        for j, spec in enumerate(self.features):
            v = arr[j]
            if not math.isfinite(v):
                raise SchemaMismatch(f"{spec.name!r}: non-finite value")
            if spec.is_categorical and (v != int(v) or not 0 <= v < len(spec.categories)):
                raise SchemaMismatch(f"{spec.name!r}: {v} is not a valid category index")
        return arr

    def format_value(self, j: int, value: float) -> str:
        spec = self.features[j]
        if spec.is_categorical:
            return spec.categories[int(value)]
        return format_number(value)

    def describe(self, x: Sequence[float]) -> dict[str, Any]:
        """Human-readable mapping of feature name to decoded value."""
        out: dict[str, Any] = {}
        for j, spec in enumerate(self.features):
            out[spec.name] = spec.categories[int(x[j])] if spec.is_categorical else _plain(x[j])
        return out


def format_number(v: float) -> str:
    """Render without trailing zeros: 45.0 -> '45', 2.50 -> '2.5'."""
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.6f}".rstrip("0").rstrip(".")


def _plain(v: float) -> int | float:
    v = float(v)
    return int(v) if v == int(v) and abs(v) < 1e15 else v


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded rows: ``X`` holds floats (categoricals as ordinal indices), ``y`` class indices.

    ``row_ids`` are the 0-based positions of each row in the source file and
    serve as instance identity across splits.
    """

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray
    row_ids: np.ndarray
    source: str = ""
    split: str = "full"

    def __post_init__(self):
        X = np.array(self.X, dtype=float).reshape(-1, len(self.schema))
        y = np.array(self.y, dtype=np.int64).reshape(-1)
        ids = np.array(self.row_ids, dtype=np.int64).reshape(-1)
        if not (len(X) == len(y) == len(ids)):
            raise SchemaMismatch("X, y and row_ids lengths differ")
        if len(y) and (y.min() < 0 or y.max() > 1):
            raise SchemaMismatch("class indices must be 0 or 1")
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "row_ids", _readonly(ids))

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx: Sequence[int] | np.ndarray, split: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.schema, self.X[idx], self.y[idx], self.row_ids[idx],
            self.source, split if split is not None else self.split,
        )

    @property
    def provenance(self) -> dict[str, str]:
        return {"source": self.source, "split": self.split}

    def class_counts(self) -> tuple[int, int]:
        return int((self.y == 0).sum()), int((self.y == 1).sum())


def load_dataset(csv_path: str | Path, schema: FeatureSchema) -> Dataset:
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise InputError(f"data file not found: {csv_path}")
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(LABEL_COLUMN, str(csv_path)) from None
        pos = {h: i for i, h in enumerate(header)}
        for name in schema.names + [LABEL_COLUMN]:
            if name not in pos:
                raise MissingColumn(name, str(csv_path))
        cols = [pos[n] for n in schema.names]
        label_col = pos[LABEL_COLUMN]
        lookups = [
            {c: k for k, c in enumerate(f.categories)} if f.is_categorical else None
            for f in schema.features
        ]

        X, y = [], []
        for r, rec in enumerate(reader):
            if not rec:
                continue
            row = []
            for spec, c, lut in zip(schema.features, cols, lookups):
                raw = rec[c].strip() if c < len(rec) else ""
                if lut is not None:
                    if raw not in lut:
                        raise UnknownCategory(spec.name, raw, r)
                    row.append(float(lut[raw]))
                else:
                    try:
                        v = float(raw)
                    except ValueError:
                        raise MalformedNumber(r, spec.name, raw) from None
                    if not math.isfinite(v):
                        raise MalformedNumber(r, spec.name, raw)
                    row.append(v)
            raw_label = rec[label_col].strip() if label_col < len(rec) else ""
            if raw_label not in schema.class_names:
                raise UnknownCategory(LABEL_COLUMN, raw_label, r)
            X.append(row)
            y.append(schema.class_names.index(raw_label))

    return Dataset(
        schema,
        np.array(X, dtype=float).reshape(-1, len(schema)),
        np.array(y, dtype=np.int64),
        np.arange(len(y)),
        source=str(csv_path),
        split="full",
    )


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified, seeded train/test partition.

    Per-class test counts use largest-remainder allocation so the total is
    ``round(test_fraction * n)``. Both sides keep the input's row order.
    """
    if not 0 < test_fraction < 1:
        raise DegenerateSplit(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(dataset)
    n_test = int(round(test_fraction * n))
    if n == 0 or n_test == 0 or n_test == n:
        raise DegenerateSplit(f"cannot split {n} rows with test_fraction {test_fraction}")

    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(dataset.y == c) for c in (0, 1)]
    exact = [test_fraction * len(ix) for ix in by_class]
    alloc = [int(math.floor(e)) for e in exact]
    order = sorted(range(2), key=lambda c: (-(exact[c] - alloc[c]), c))
    for c in order[: n_test - sum(alloc)]:
        alloc[c] += 1

    test_idx = []
    for ix, k in zip(by_class, alloc):
        test_idx.extend(ix[rng.permutation(len(ix))[:k]])
    is_test = np.zeros(n, dtype=bool)
    is_test[np.asarray(test_idx, dtype=np.int64)] = True
    return (
        dataset.subset(np.flatnonzero(~is_test), "train"),
        dataset.subset(np.flatnonzero(is_test), "test"),
    )


def median(values: Sequence[float] | np.ndarray) -> float:
    # even length: mean of the two middle order statistics
    return float(np.median(np.asarray(values, dtype=float)))


def mad(values: Sequence[float] | np.ndarray) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.median(np.abs(v - np.median(v))))


def _decimals(col: np.ndarray, limit: int = 6) -> int:
    for d in range(limit + 1):
        if np.all(np.round(col, d) == col):
            return d
    return limit


@dataclass(frozen=True, eq=False)
class FeatureStats:
    """Training-split statistics, indexed by feature position.

    Continuous-only fields are NaN (or empty) for categorical features and
    vice versa. ``scale`` is the MAD with zero replaced by 1.
    """

    schema: FeatureSchema
    median: np.ndarray
    mad: np.ndarray
    scale: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    decimals: tuple[int, ...]
    bin_edges: tuple[np.ndarray, ...]
    frequencies: tuple[dict[str, int], ...]
    degenerate: tuple[str, ...] = field(default=())
    n_bins: int = 10
    split: str = "train"

    def bin_of(self, j: int, values: np.ndarray | float) -> np.ndarray:
        edges = self.bin_edges[j]
        return np.searchsorted(edges[1:-1], values, side="right")

    def discretize(self, X: np.ndarray) -> np.ndarray:
        """Map rows to integer codes: category index or decile-bin index."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape, dtype=np.int64)
        for j, spec in enumerate(self.schema.features):
            if spec.is_categorical:
                out[:, j] = X[:, j].astype(np.int64)
            else:
                out[:, j] = self.bin_of(j, X[:, j])
        return out

    def to_dict(self) -> dict[str, Any]:
        feats = {}
        for j, spec in enumerate(self.schema.features):
            if spec.is_categorical:
                feats[spec.name] = {"frequencies": self.frequencies[j]}
            else:
                feats[spec.name] = {
                    "median": float(self.median[j]),
                    "mad": float(self.mad[j]),
                    "min": float(self.minimum[j]),
                    "max": float(self.maximum[j]),
                    "bin_edges": [float(e) for e in self.bin_edges[j]],
                }
        return {"n_bins": self.n_bins, "degenerate": list(self.degenerate), "features": feats}


def compute_stats(train: Dataset, bins: int = 10) -> FeatureStats:
    if len(train) == 0:
        raise InputError("cannot compute statistics of an empty dataset")
    if bins < 1:
        raise InputError("bins must be positive")
    d = len(train.schema)
    med = np.full(d, np.nan)
    mads = np.full(d, np.nan)
    lo = np.full(d, np.nan)
    hi = np.full(d, np.nan)
    decimals, edges, freqs, degenerate = [], [], [], []
    qs = np.linspace(0.0, 1.0, bins + 1)
    for j, spec in enumerate(train.schema.features):
        col = train.X[:, j]
        if spec.is_categorical:
            counts = np.bincount(col.astype(np.int64), minlength=len(spec.categories))
            freqs.append({c: int(n) for c, n in zip(spec.categories, counts)})
            decimals.append(0)
            edges.append(np.empty(0))
            continue
        freqs.append({})
        med[j] = median(col)
        mads[j] = mad(col)
        lo[j], hi[j] = col.min(), col.max()
        decimals.append(_decimals(col))
        edges.append(_readonly(np.unique(np.quantile(col, qs))))
        if mads[j] == 0:
            degenerate.append(spec.name)
    scale = np.where(np.nan_to_num(mads) > 0, mads, 1.0)
    return FeatureStats(
        schema=train.schema,
        median=_readonly(med),
        mad=_readonly(mads),
        scale=_readonly(scale),
        minimum=_readonly(lo),
        maximum=_readonly(hi),
        decimals=tuple(decimals),
        bin_edges=tuple(edges),
        frequencies=tuple(freqs),
        degenerate=tuple(degenerate),
        n_bins=bins,
        split=train.split,
    )
