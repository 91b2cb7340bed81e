"""Group counterfactuals: one shared substitution that flips a pool of like instances.

Pipeline: like-neighbor pool -> individual counterfactuals vote on key
features -> contrasting-class region -> candidate substitutions taken from
real region rows (or their medoids) -> the candidate with the highest
coverage of the pool wins.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .errors import (
    AllSinglesFailed,
    EmptyContrastClass,
    InputError,
    NoValidCandidate,
    TooFewPoints,
)
from .metrics import proximity_rows
from .model import Model
from .neighbors import ExplanationPool, nearest_like_neighbors
from .singlecf import CfSearchConfig, Counterfactual, generate_single_cf
from .tabular import Dataset, FeatureSchema, FeatureStats, _plain

INCREASE, DECREASE, NONE = "increase", "decrease", "none"
ROWS, MEDOIDS = "rows", "medoids"


@dataclass(frozen=True)
class GroupConfig:
    pool_size: int = 5
    k: int = 2
    n_candidates: int = 100
    mode: str = ROWS
    n_medoids: int = 5
    seed: int = 0
    cf: CfSearchConfig = field(default_factory=CfSearchConfig)
    trace: bool = False
    # skip candidates that leave some pool instance's key feature unchanged
    require_full_sparsity: bool = False

    def __post_init__(self):
        if self.mode not in (ROWS, MEDOIDS):
            raise InputError(f"unknown sampling mode {self.mode!r}")
        for name in ("pool_size", "k", "n_candidates", "n_medoids"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be positive")


@dataclass(frozen=True)
class KeyFeatureSet:
    features: tuple[str, ...]
    directions: dict[str, str]
    votes: dict[str, int]
    singles: tuple[Counterfactual, ...] = ()
    failed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "features": list(self.features),
            "directions": dict(self.directions),
            "votes": dict(self.votes),
            "singles_failed": self.failed,
        }


@dataclass(frozen=True, eq=False)
class Region:
    schema: FeatureSchema
    target: int
    X: np.ndarray
    row_ids: np.ndarray
    filters: dict[str, Any]
    fallback: bool = False

    def __len__(self) -> int:
        return len(self.X)

    def describe(self) -> dict[str, Any]:
        return {"size": len(self), "filters": self.filters, "fallback": self.fallback}


@dataclass(frozen=True)
class CandidateSubstitution:
    values: dict[str, float]
    origin: str


@dataclass(frozen=True, eq=False)
class GroupCounterfactual:
    pool: ExplanationPool
    key_features: KeyFeatureSet
    substitution: CandidateSubstitution
    per_instance_valid: tuple[bool, ...]
    coverage: float
    target_class: int
    proximity_per_instance: tuple[float, ...]
    region: dict[str, Any]
    trace: tuple[dict[str, Any], ...] | None = None

    def substituted(self, schema: FeatureSchema) -> np.ndarray:
        return substitute(self.pool.instances, self.substitution, schema)

    def changes_for(self, i: int, schema: FeatureSchema) -> dict[str, tuple[float, float]]:
        x = self.pool.instances[i]
        out = {}
        for name in schema.names:
            if name in self.substitution.values:
                new = self.substitution.values[name]
                old = float(x[schema.index(name)])
                if new != old:
                    out[name] = (old, new)
        return out

    def sparsity_for(self, i: int, schema: FeatureSchema) -> int:
        return len(self.changes_for(i, schema))

    def to_dict(self, schema: FeatureSchema) -> dict[str, Any]:
        sub = {}
        for name, v in self.substitution.values.items():
            spec = schema.features[schema.index(name)]
            sub[name] = spec.categories[int(v)] if spec.is_categorical else _plain(v)
        doc = {
            "pool_ids": self.pool.ids,
            "key_features": self.key_features.to_dict(),
            "region": self.region,
            "substitution": sub,
            "substitution_origin": self.substitution.origin,
            "target_class": schema.class_names[self.target_class],
            "coverage": self.coverage,
            "per_instance_valid": list(self.per_instance_valid),
            "proximity_per_instance": list(self.proximity_per_instance),
            "sparsity_per_instance": [self.sparsity_for(i, schema) for i in range(self.pool.size)],
        }
        if self.trace is not None:
            doc["candidates"] = list(self.trace)
        return doc


# -- step 1: key features ------------------------------------------------------


def tally_key_features(
    singles: Sequence[Counterfactual], schema: FeatureSchema, k: int,
) -> KeyFeatureSet:
    """Vote per feature over valid singles; top ``k`` actionable features win.

    Ties go to the lower feature position. A continuous key feature's
    direction is the majority sign of its recorded changes.
    """
    valid = [cf for cf in singles if cf.valid]
    votes = Counter(name for cf in valid for name in cf.changes)
    ranked = sorted(
        (name for name in votes if schema.features[schema.index(name)].actionable),
        key=lambda n: (-votes[n], schema.index(n)),
    )
    chosen = tuple(sorted(ranked[:k], key=schema.index))
    directions = {}
    for name in chosen:
        if schema.features[schema.index(name)].is_categorical:
            continue
        balance = sum(cf.directions.get(name, 0) for cf in valid)
        directions[name] = INCREASE if balance > 0 else DECREASE if balance < 0 else NONE
    ordered_votes = {n: votes[n] for n in sorted(votes, key=schema.index)}
    return KeyFeatureSet(chosen, directions, ordered_votes, tuple(singles), len(singles) - len(valid))


def identify_key_features(
    pool: ExplanationPool,
    model: Model,
    stats: FeatureStats,
    cf_config: CfSearchConfig | None = None,
    k: int = 2,
) -> KeyFeatureSet:
    """Generate a single counterfactual per pool instance and tally the changed features.

    Instance ``i`` of the pool is searched with seed ``cf_config.seed + i``.
    Partial failure is tolerated and counted in ``failed``.
    """
    cf_config = cf_config or CfSearchConfig()
    schema = stats.schema
    if k > len(schema.actionable_indices):
        raise InputError(f"k={k} exceeds the {len(schema.actionable_indices)} actionable features")
    target = 1 - pool.cls
    singles = [
        generate_single_cf(
            model, x, target, stats, replace(cf_config, seed=cf_config.seed + i), pool.ids[i]
        )
        for i, x in enumerate(pool.instances)
    ]
    if not any(cf.valid for cf in singles):
        raise AllSinglesFailed(f"no valid individual counterfactual for any of {pool.size} pool instances")
    return tally_key_features(singles, schema, k)


# -- step 2: region and candidate values ------------------------------------------


def build_region(
    train: Dataset,
    model: Model,
    target: int,
    keys: KeyFeatureSet,
    pool: ExplanationPool,
    predictions: np.ndarray | None = None,
) -> Region:
    """Training rows predicted ``target``, filtered by the key features' directions.

    The reference point for a direction is the pool median of that feature.
    If the filter leaves nothing, the unfiltered set is used and flagged.
    """
    schema = train.schema
    if predictions is None:
        predictions = model.predict_many(train.X)
    base = predictions == target
    if not base.any():
        raise EmptyContrastClass(
            f"no training instance is predicted {schema.class_names[target]!r}"
        )
    mask = base.copy()
    filters: dict[str, Any] = {}
    for name, direction in keys.directions.items():
        if direction == NONE:
            continue
        j = schema.index(name)
        ref = float(np.median(pool.instances[:, j]))
        col = train.X[:, j]
        mask &= col > ref if direction == INCREASE else col < ref
        filters[name] = {"direction": direction, "pool_median": _plain(ref)}
    fallback = not mask.any()
    if fallback:
        mask = base
    ix = np.flatnonzero(mask)
    return Region(schema, target, train.X[ix], train.row_ids[ix], filters, fallback)


def _dissimilarity(A: np.ndarray, B: np.ndarray, scales: np.ndarray, categorical: np.ndarray) -> np.ndarray:
    diff = np.abs(A[:, None, :] - B[None, :, :])
    cont = (diff[..., ~categorical] / scales[~categorical]).sum(axis=-1)
    return cont + (diff[..., categorical] > 0).sum(axis=-1)


def kmedoids(
    points: Sequence[Sequence[float]] | np.ndarray,
    k: int,
    seed: int = 0,
    scales: Sequence[float] | None = None,
    categorical: Sequence[bool] | None = None,
) -> tuple[list[int], float]:
    """PAM k-medoids: greedy build, then best-improvement swaps.

    Dissimilarity is ``|a - b| / scale`` summed over continuous dimensions
    plus a 0/1 mismatch per categorical dimension. Duplicate points are
    collapsed and weighted, which leaves the objective unchanged. Candidates
    are scanned in a seeded random order so ties resolve reproducibly.

    Returns indices into ``points`` (first occurrence of each medoid) and
    the total within-cluster dissimilarity.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    n, q = P.shape
    if k < 1 or k > n:
        raise TooFewPoints(f"cannot pick {k} medoids from {n} points")
    scales = np.ones(q) if scales is None else np.asarray(scales, dtype=float)
    categorical = np.zeros(q, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)

    uniq, first, weight = np.unique(P, axis=0, return_index=True, return_counts=True)
    u = len(uniq)
    if k >= u:
        chosen = sorted(first.tolist())
        rest = [i for i in range(n) if i not in set(chosen)]
        return chosen + rest[: k - u], 0.0

    D = _dissimilarity(uniq, uniq, scales, categorical)
    w = weight.astype(float)
    order = np.random.default_rng(seed).permutation(u)

    def cost_with(col_min: np.ndarray) -> float:
        return float(w @ col_min)

    medoids: list[int] = []
    nearest = np.full(u, np.inf)
    for _ in range(k):
        totals = w @ np.minimum(nearest[:, None], D[:, order])
        if medoids:
            totals[np.isin(order, medoids)] = np.inf
        c = int(order[np.argmin(totals)])
        medoids.append(c)
        nearest = np.minimum(nearest, D[:, c])
    current = cost_with(nearest)

    for _ in range(100):
        best = (current - 1e-12, -1, -1)
        for pos in range(k):
            others = [m for i, m in enumerate(medoids) if i != pos]
            d_other = D[:, others].min(axis=1) if others else np.full(u, np.inf)
            totals = w @ np.minimum(d_other[:, None], D[:, order])
            totals[np.isin(order, medoids)] = np.inf
            i = int(np.argmin(totals))
            if totals[i] < best[0]:
                best = (float(totals[i]), pos, int(order[i]))
        if best[1] < 0:
            break
        medoids[best[1]] = best[2]
        current = cost_with(D[:, medoids].min(axis=1))
    return [int(first[m]) for m in medoids], current


def sample_candidates(
    region: Region,
    keys: KeyFeatureSet,
    m: int,
    seed: int,
    mode: str = ROWS,
    stats: FeatureStats | None = None,
    n_medoids: int = 5,
) -> list[CandidateSubstitution]:
    """Key-feature value tuples taken from real region rows.

    ``rows``: the first ``m`` rows of a seeded permutation, projected and
    deduplicated in draw order. ``medoids``: k-medoid prototypes of the
    projected region (needs ``stats`` for the dissimilarity scales).
    """
    if len(region) == 0:
        raise EmptyContrastClass("region is empty")
    if m < 1:
        raise InputError("candidate budget must be positive")
    if mode == ROWS:
        schema_cols = [region.schema.index(n) for n in keys.features]
        draw = np.random.default_rng(seed).permutation(len(region))[:m]
        seen, out = set(), []
        for r in draw:
            vals = tuple(float(v) for v in region.X[r, schema_cols])
            if vals in seen:
                continue
            seen.add(vals)
            out.append(CandidateSubstitution(dict(zip(keys.features, vals)), f"row:{int(region.row_ids[r])}"))
        return out
    if mode == MEDOIDS:
        if stats is None:
            raise InputError("medoid sampling needs feature statistics")
        cols = [region.schema.index(n) for n in keys.features]
        proj = region.X[:, cols]
        n_distinct = len(np.unique(proj, axis=0))
        idx, _ = kmedoids(
            proj, min(n_medoids, n_distinct), seed,
            scales=stats.scale[cols], categorical=stats.schema.categorical_mask[cols],
        )
        return [
            CandidateSubstitution(dict(zip(keys.features, (float(v) for v in proj[i]))), f"medoid:{n}")
            for n, i in enumerate(idx)
        ]
    raise InputError(f"unknown sampling mode {mode!r}")


# -- steps 3 and 4: substitution, evaluation, selection -----------------------------


def substitute(X: np.ndarray, candidate: CandidateSubstitution, schema: FeatureSchema) -> np.ndarray:
    out = np.array(np.atleast_2d(X), dtype=float)
    for name, v in candidate.values.items():
        out[:, schema.index(name)] = v
    return out


def evaluate_candidate(
    model: Model, pool: ExplanationPool, candidate: CandidateSubstitution, schema: FeatureSchema,
) -> tuple[tuple[bool, ...], float]:
    """Per-instance flip to the contrasting class, and the covered fraction."""
    pred = model.predict_many(substitute(pool.instances, candidate, schema))
    valid = tuple(bool(v) for v in pred == 1 - pool.cls)
    return valid, sum(valid) / pool.size


def group_explain(
    model: Model,
    train: Dataset,
    stats: FeatureStats,
    query,
    config: GroupConfig | None = None,
    query_id: int | None = None,
    pool: ExplanationPool | None = None,
    predictions: np.ndarray | None = None,
) -> GroupCounterfactual:
    """Best shared substitution for ``query`` and its like neighbors.

    Selection order: highest coverage, then lowest mean proximity over the
    covered instances, then earliest candidate.
    """
    config = config or GroupConfig()
    schema = train.schema
    if predictions is None:
        predictions = model.predict_many(train.X)
    if pool is None:
        pool = nearest_like_neighbors(
            query, train, model, stats, config.pool_size, query_id, predictions
        )
    target = 1 - pool.cls
    keys = identify_key_features(pool, model, stats, config.cf, config.k)
    region = build_region(train, model, target, keys, pool, predictions)
    candidates = sample_candidates(
        region, keys, config.n_candidates, config.seed, config.mode, stats, config.n_medoids
    )
    diagnostic = {
        "region": region.describe(),
        "votes": keys.votes,
        "key_features": list(keys.features),
        "n_candidates": len(candidates),
    }
    if not candidates:
        raise NoValidCandidate("no candidate substitutions were sampled", diagnostic)

    inst = pool.instances
    cols = [schema.index(n) for n in keys.features]
    stacked = np.vstack([substitute(inst, c, schema) for c in candidates])
    flips = (model.predict_many(stacked) == target).reshape(len(candidates), pool.size)
    prox = np.vstack([proximity_rows(x, stacked[i::pool.size], stats) for i, x in enumerate(inst)]).T

    scored = []
    for n, cand in enumerate(candidates):
        vals = np.array([cand.values[f] for f in keys.features])
        excluded = config.require_full_sparsity and bool((inst[:, cols] == vals).any())
        covered = flips[n]
        cov = float(covered.sum()) / pool.size
        mean_prox = float(prox[n, covered].mean()) if covered.any() else float("inf")
        scored.append((n, cand, cov, mean_prox, excluded))

    eligible = [s for s in scored if not s[4]]
    best = min(eligible, key=lambda s: (-s[2], s[3], s[0]), default=None)
    if best is None or best[2] == 0:
        raise NoValidCandidate(
            f"no shared substitution flips any pool instance to {schema.class_names[target]!r}",
            diagnostic,
        )
    n, cand, cov, _, _ = best

    trace = None
    if config.trace:
        rows = [
            {
                "index": i,
                "origin": c.origin,
                "values": {f: schema.format_value(schema.index(f), v) for f, v in c.values.items()},
                "coverage": cv,
                "mean_proximity": None if mp == float("inf") else mp,
                "excluded": ex,
            }
            for i, c, cv, mp, ex in scored
        ]
        rows.sort(key=lambda r: -r["coverage"])
        trace = tuple(rows)

    return GroupCounterfactual(
        pool=pool,
        key_features=keys,
        substitution=cand,
        per_instance_valid=tuple(bool(v) for v in flips[n]),
        coverage=cov,
        target_class=target,
        proximity_per_instance=tuple(float(v) for v in prox[n]),
        region=region.describe(),
        trace=trace,
    )
