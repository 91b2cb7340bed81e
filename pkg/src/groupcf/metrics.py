"""Explanation quality measures and the matching statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import betainc

from .errors import LengthMismatch, MissingItem, SchemaMismatch, ZeroVariance
from .tabular import FeatureStats

Changes = Mapping[str, tuple[float, float]]


@dataclass(frozen=True)
class ProximityScore:
    continuous_part: float
    categorical_part: float

    @property
    def total(self) -> float:
        return self.continuous_part + self.categorical_part


def proximity(query: Sequence[float], changes: Changes, stats: FeatureStats) -> ProximityScore:
    """MAD-scaled L1 distance on continuous changes plus one per changed categorical."""
    schema = stats.schema
    query = np.asarray(query, dtype=float)
    if query.shape != (len(schema),):
        raise SchemaMismatch("query does not match the schema")
    cont = 0.0
    cat = 0.0
    for name, (old, new) in changes.items():
        j = schema.index(name)
        if old != query[j]:
            raise SchemaMismatch(f"change for {name!r} starts at {old}, query has {query[j]}")
        if schema.features[j].is_categorical:
            cat += float(new != old)
        else:
            cont += abs(new - old) / stats.scale[j]
    return ProximityScore(cont, cat)


def proximity_rows(query: np.ndarray, X: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Total proximity of every row of ``X`` from ``query``."""
    cat = stats.schema.categorical_mask
    diff = np.abs(np.atleast_2d(X) - query)
    cont = (diff[:, ~cat] / stats.scale[~cat]).sum(axis=1)
    return cont + (diff[:, cat] > 0).sum(axis=1)


def sparsity(changes: Changes) -> int:
    return len(changes)


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p_two_tailed: float

    def summary(self) -> str:
        p = f"{self.p_two_tailed:.3f}"
        return f"t({self.df})={self.t:.2f}, p={p[1:] if p.startswith('0') else p}"


def t_two_tailed_p(t: float, df: int) -> float:
    # P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_t_test(xs: Sequence[float], ys: Sequence[float]) -> TTestResult:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise LengthMismatch(f"paired samples differ in shape: {xs.shape} vs {ys.shape}")
    n = len(xs)
    if n < 2:
        raise LengthMismatch("paired t-test needs at least two pairs")
    d = xs - ys
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ZeroVariance("differences have zero variance")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    return TTestResult(t, n - 1, t_two_tailed_p(t, n - 1))


def gap_score(ordering: Sequence[Hashable], item_set: Iterable[Hashable]) -> int:
    """Foreign items interleaved within the span the set occupies in ``ordering``."""
    items = list(item_set)
    positions: dict[Hashable, list[int]] = {}
    for pos, item in enumerate(ordering):
        positions.setdefault(item, []).append(pos)
    if len(set(items)) != len(items):
        raise MissingItem(f"item set contains duplicates: {items}")
    pos = []
    for item in items:
        found = positions.get(item, [])
        if len(found) != 1:
            raise MissingItem(f"item {item!r} occurs {len(found)} times in the ordering")
        pos.append(found[0])
    return max(pos) - min(pos) + 1 - len(items)
