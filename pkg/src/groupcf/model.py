"""Black-box binary classifiers: gradient-boosted trees and a lookup table.

Both expose ``predict_proba_many`` / ``predict_many`` over row matrices and
single-instance ``predict_proba`` / ``predict``. Class index 1 is the
"positive" class of the boosted model's log-odds.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    FormatVersionMismatch,
    InputError,
    InvalidConfig,
    SchemaMismatch,
    SingleClassTraining,
    UnknownInstance,
)
from .tabular import Dataset

FORMAT_VERSION = 1
BOOSTED = "boosted-trees"
LOOKUP = "lookup-table"


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.n_trees < 1:
            raise InvalidConfig(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 1:
            raise InvalidConfig(f"max_depth must be >= 1, got {self.max_depth}")


class Model:
    kind: str
    n_features: int

    def predict_proba_many(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        p = self.predict_proba_many(X)
        # tie goes to class 0
        return (p[:, 1] > p[:, 0]).astype(np.int64)

    def predict_proba(self, x: Sequence[float]) -> tuple[float, float]:
        p = self.predict_proba_many(np.asarray(x, dtype=float).reshape(1, -1))[0]
        return float(p[0]), float(p[1])

    def predict(self, x: Sequence[float]) -> int:
        return int(self.predict_many(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(
                f"model expects {self.n_features} features, got {X.shape[1]}"
            )
        return X


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: int

    def apply(self, X: np.ndarray) -> np.ndarray:
        n = len(X)
        rows = np.arange(n)
        node = np.zeros(n, dtype=np.int64)
        for _ in range(self.depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            xv = X[rows, np.where(internal, f, 0)]
            nxt = np.where(xv <= self.threshold[node], self.left[node], self.right[node])
            node = np.where(internal, nxt, node)
        return self.value[node]

    def to_record(self, i: int = 0) -> dict[str, Any]:
        if self.feature[i] < 0:
            return {"value": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_record(int(self.left[i])),
            "right": self.to_record(int(self.right[i])),
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Tree":
        feat, thr, left, right, val = [], [], [], [], []

        def visit(r: dict[str, Any], depth: int) -> tuple[int, int]:
            i = len(feat)
            feat.append(-1)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
            val.append(0.0)
            if "value" in r:
                val[i] = float(r["value"])
                return i, depth
            feat[i] = int(r["feature"])
            thr[i] = float(r["threshold"])
            left[i], dl = visit(r["left"], depth + 1)
            right[i], dr = visit(r["right"], depth + 1)
            return i, max(dl, dr)

        _, depth = visit(rec, 0)
        return _make_tree(feat, thr, left, right, val, depth)


def _make_tree(feat, thr, left, right, val, depth) -> Tree:
    arrays = [
        np.array(feat, dtype=np.int64),
        np.array(thr, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(val, dtype=float),
    ]
    for a in arrays:
        a.flags.writeable = False
    return Tree(*arrays, depth=depth)


class BoostedTrees(Model):
    kind = BOOSTED

    def __init__(
        self,
        init_score: float,
        learning_rate: float,
        trees: Sequence[Tree],
        n_features: int,
        config: TrainConfig | None = None,
        feature_names: Sequence[str] = (),
        class_names: Sequence[str] = (),
    ):
        self.init_score = float(init_score)
        self.learning_rate = float(learning_rate)
        self.trees = tuple(trees)
        self.n_features = int(n_features)
        self.config = config
        self.feature_names = tuple(feature_names)
        self.class_names = tuple(class_names)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        score = np.full(len(X), self.init_score)
        for tree in self.trees:
            score += self.learning_rate * tree.apply(X)
        return score

    def staged_decision(self, X: np.ndarray) -> Iterator[np.ndarray]:
        """Yield the raw score after 0, 1, ..., n_trees boosting rounds."""
        X = self._check(X)
        score = np.full(len(X), self.init_score)
        yield score.copy()
        for tree in self.trees:
            score += self.learning_rate * tree.apply(X)
            yield score.copy()

    def predict_proba_many(self, X: np.ndarray) -> np.ndarray:
        p1 = expit(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "class_names": list(self.class_names),
            "config": asdict(self.config) if self.config else None,
            "init_score": self.init_score,
            "learning_rate": self.learning_rate,
            "trees": [t.to_record() for t in self.trees],
        }


class LookupTableModel(Model):
    """Exact class distributions for an enumerated set of instances."""

    kind = LOOKUP

    def __init__(self, table: dict[tuple[float, ...], tuple[float, float]], n_features: int | None = None):
        if not table and n_features is None:
            raise InvalidConfig("empty lookup table needs an explicit n_features")
        entries = {}
        for key, (p0, p1) in table.items():
            key = tuple(float(v) for v in key)
            if p0 < 0 or p1 < 0 or abs(p0 + p1 - 1.0) > 1e-9:
                raise InvalidConfig(f"table entry {key} is not a distribution: {(p0, p1)}")
            entries[key] = (float(p0), float(p1))
        self.n_features = n_features if n_features is not None else len(next(iter(entries)))
        if any(len(k) != self.n_features for k in entries):
            raise InvalidConfig("table keys have inconsistent lengths")
        self.table = entries

    def predict_proba_many(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        out = np.empty((len(X), 2))
        for i, row in enumerate(X):
            try:
                out[i] = self.table[tuple(row.tolist())]
            except KeyError:
                raise UnknownInstance(f"instance {row.tolist()} not in lookup table") from None
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "n_features": self.n_features,
            "table": [{"x": list(k), "proba": list(v)} for k, v in sorted(self.table.items())],
        }


def predict_proba(model: Model, x: Sequence[float]) -> tuple[float, float]:
    return model.predict_proba(x)


def predict(model: Model, x: Sequence[float]) -> int:
    return model.predict(x)


def accuracy(model: Model, data: Dataset) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(model.predict_many(data.X) == data.y))


def log_loss(y: np.ndarray, p1: np.ndarray) -> float:
    p1 = np.clip(p1, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p1) + (1 - y) * np.log1p(-p1)))


# -- training ----------------------------------------------------------------


def _best_split(X, order, in_node, grad, n_node, g_sum):
    """Exact greedy split over sorted unique values.

    Gain is the reduction in squared error of the residuals. Ties go to the
    lowest feature index, then the lowest threshold.
    """
    best = (0.0, -1, 0.0)
    parent = g_sum * g_sum / n_node
    for j in range(X.shape[1]):
        idx = order[j][in_node[order[j]]]
        xs = X[idx, j]
        distinct = xs[1:] > xs[:-1]
        if not distinct.any():
            continue
        cs = np.cumsum(grad[idx])[:-1]
        n_left = np.arange(1, len(idx))
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = cs * cs / n_left + (g_sum - cs) ** 2 / (n_node - n_left) - parent
        gain = np.where(distinct, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0] + 1e-12:
            best = (float(gain[k]), j, (xs[k] + xs[k + 1]) / 2.0)
    return best


def _fit_tree(X, order, grad, hess, max_depth) -> Tree:
    feat, thr, left, right, val = [], [], [], [], []
    n = len(X)

    def grow(members: np.ndarray, depth: int) -> int:
        i = len(feat)
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(0.0)
        g = grad[members]
        g_sum = float(g.sum())
        split = (0.0, -1, 0.0)
        if depth < max_depth and len(members) >= 2:
            in_node = np.zeros(n, dtype=bool)
            in_node[members] = True
            split = _best_split(X, order, in_node, grad, len(members), g_sum)
        _, j, t = split
        if j < 0:
            # one Newton step for log loss
            h_sum = float(hess[members].sum())
            val[i] = g_sum / h_sum if abs(h_sum) > 1e-150 else 0.0
            return i
        feat[i], thr[i] = j, t
        go_left = X[members, j] <= t
        left[i] = grow(members[go_left], depth + 1)
        right[i] = grow(members[~go_left], depth + 1)
        return i

    grow(np.arange(n), 0)
    return _make_tree(feat, thr, left, right, val, max_depth)


def train_boosted(train: Dataset, config: TrainConfig | None = None) -> BoostedTrees:
    """Binary log-loss gradient boosting with depth-limited regression trees.

    The procedure has no random component, so ``config.seed`` is recorded
    but does not change the fitted model.
    """
    config = config or TrainConfig()
    n0, n1 = train.class_counts()
    if n0 == 0 or n1 == 0:
        raise SingleClassTraining(f"training data has class counts {(n0, n1)}")
    X, y = train.X, train.y.astype(float)
    init = math.log(n1 / n0)
    order = [np.argsort(X[:, j], kind="stable") for j in range(X.shape[1])]
    score = np.full(len(X), init)
    trees = []
    for _ in range(config.n_trees):
        p = expit(score)
        tree = _fit_tree(X, order, y - p, p * (1.0 - p), config.max_depth)
        trees.append(tree)
        score += config.learning_rate * tree.apply(X)
    return BoostedTrees(
        init, config.learning_rate, trees, X.shape[1], config,
        train.schema.names, train.schema.class_names,
    )


# -- persistence ---------------------------------------------------------------


def model_to_json(model: Model) -> str:
    return json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n"


def model_from_dict(doc: dict[str, Any]) -> Model:
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        found = doc.get("format_version") if isinstance(doc, dict) else None
        raise FormatVersionMismatch(
            f"expected model format_version {FORMAT_VERSION}, found {found!r}"
        )
    try:
        if doc["kind"] == BOOSTED:
            cfg = doc.get("config")
            return BoostedTrees(
                doc["init_score"],
                doc["learning_rate"],
                [Tree.from_record(r) for r in doc["trees"]],
                doc["n_features"],
                TrainConfig(**cfg) if cfg else None,
                doc.get("feature_names", ()),
                doc.get("class_names", ()),
            )
        if doc["kind"] == LOOKUP:
            table = {tuple(e["x"]): tuple(e["proba"]) for e in doc["table"]}
            return LookupTableModel(table, doc["n_features"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatVersionMismatch(f"malformed model document: {exc}") from exc
    raise FormatVersionMismatch(f"unknown model kind {doc.get('kind')!r}")


def save_model(model: Model, path: str | Path) -> None:
    try:
        Path(path).write_text(model_to_json(model), encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write model file {path}: {exc}") from exc


def load_model(path: str | Path) -> Model:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read model file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatVersionMismatch(f"{path}: not a model file ({exc})") from exc
    return model_from_dict(doc)
