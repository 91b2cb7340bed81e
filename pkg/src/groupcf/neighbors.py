"""Hamming distance over discretized rows, like-neighbor pools and seed selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, InsufficientEligible, InsufficientNeighbors, SchemaMismatch
from .model import Model
from .tabular import Dataset, FeatureStats


@dataclass(frozen=True, eq=False)
class ExplanationPool:
    """A query plus its nearest like neighbors, all predicted ``cls`` by the model.

    ``member_ids`` are dataset row ids; ``query_id`` is None when the query
    is not a row of the searched dataset.
    """

    query: np.ndarray
    members: np.ndarray
    cls: int
    query_id: int | None
    member_ids: tuple[int, ...]
    distances: tuple[int, ...]

    @property
    def size(self) -> int:
        return 1 + len(self.members)

    @property
    def instances(self) -> np.ndarray:
        """Query first, then members in distance order."""
        return np.vstack([self.query[None, :], self.members])

    @property
    def ids(self) -> list[int | None]:
        return [self.query_id, *self.member_ids]


def hamming_distance(a: Sequence[float], b: Sequence[float], stats: FeatureStats) -> int:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = len(stats.schema)
    if a.shape != (d,) or b.shape != (d,):
        raise SchemaMismatch(f"expected two instances of length {d}, got {a.shape} and {b.shape}")
    codes = stats.discretize(np.vstack([a, b]))
    return int((codes[0] != codes[1]).sum())


def hamming_to_rows(query: np.ndarray, X: np.ndarray, stats: FeatureStats) -> np.ndarray:
    q = stats.discretize(query)[0]
    return (stats.discretize(X) != q).sum(axis=1)


def nearest_like_neighbors(
    query: Sequence[float],
    train: Dataset,
    model: Model,
    stats: FeatureStats,
    pool_size: int = 5,
    query_id: int | None = None,
    predictions: np.ndarray | None = None,
) -> ExplanationPool:
    """Retrieve the ``pool_size - 1`` training rows closest to ``query``.

    Candidates must share the query's predicted class. The query itself is
    excluded by row id and any row with identical values is skipped too;
    distance ties resolve by dataset row order. ``predictions`` may carry
    precomputed ``model.predict_many(train.X)``.
    """
    if pool_size < 2:
        raise InputError("pool_size must be at least 2 (query plus one neighbor)")
    query = train.schema.check_instance(query)
    cls = model.predict(query)
    wanted = pool_size - 1
    if predictions is None:
        predictions = model.predict_many(train.X)
    ok = predictions == cls
    ok &= ~np.all(train.X == query, axis=1)
    if query_id is not None:
        ok &= train.row_ids != query_id
    cand = np.flatnonzero(ok)
    if len(cand) < wanted:
        raise InsufficientNeighbors(len(cand), wanted)
    dist = hamming_to_rows(query, train.X[cand], stats)
    pick = cand[np.argsort(dist, kind="stable")[:wanted]]
    picked_dist = np.sort(dist, kind="stable")[:wanted]
    return ExplanationPool(
        query=query,
        members=train.X[pick],
        cls=cls,
        query_id=query_id,
        member_ids=tuple(int(i) for i in train.row_ids[pick]),
        distances=tuple(int(v) for v in picked_dist),
    )


def eligible_seeds(
    dataset: Dataset, model: Model, margin: float, seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per class, positions of correctly classified low-confidence rows in seeded random order.

    A row is eligible when its predicted class matches its label and the two
    class probabilities are within ``margin`` of each other.
    """
    if not 0 < margin < 1:
        raise InputError(f"margin must be in (0, 1), got {margin}")
    proba = model.predict_proba_many(dataset.X)
    pred = (proba[:, 1] > proba[:, 0]).astype(np.int64)
    ok = (pred == dataset.y) & (np.abs(proba[:, 0] - proba[:, 1]) <= margin)
    rng = np.random.default_rng(seed)
    out = []
    for c in (0, 1):
        ix = np.flatnonzero(ok & (dataset.y == c))
        out.append(ix[rng.permutation(len(ix))])
    return out[0], out[1]


def select_seeds(
    dataset: Dataset, model: Model, count_per_class: int, margin: float = 0.15, seed: int = 0,
) -> list[int]:
    """Draw ``count_per_class`` eligible rows from each class; returns dataset positions."""
    chosen = []
    for c, ix in enumerate(eligible_seeds(dataset, model, margin, seed)):
        if len(ix) < count_per_class:
            raise InsufficientEligible(dataset.schema.class_names[c], len(ix), count_per_class)
        chosen.extend(int(i) for i in ix[:count_per_class])
    return chosen
