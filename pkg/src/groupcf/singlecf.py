"""Per-instance counterfactuals by random sampling plus greedy sparsification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InputError, InvalidConfig, InvalidCounterfactual, NoActionableFeatures
from .metrics import ProximityScore, proximity, proximity_rows
from .model import Model
from .tabular import FeatureSchema, FeatureStats, _plain


@dataclass(frozen=True)
class CfSearchConfig:
    n_samples: int = 1000
    sparsity_param: float = 0.1
    stopping_threshold: float = 0.5
    seed: int = 0
    max_features_changed: int | None = None
    min_features_changed: int = 1

    def __post_init__(self):
        if self.n_samples < 1:
            raise InvalidConfig("n_samples must be positive")
        if not 0 < self.stopping_threshold < 1:
            raise InvalidConfig("stopping_threshold must be in (0, 1)")
        if not 0 <= self.sparsity_param <= 1:
            raise InvalidConfig("sparsity_param must be in [0, 1]")
        if self.min_features_changed < 1:
            raise InvalidConfig("min_features_changed must be >= 1")
        if self.max_features_changed is not None and self.max_features_changed < self.min_features_changed:
            raise InvalidConfig("max_features_changed must be >= min_features_changed")


@dataclass(frozen=True, eq=False)
class Counterfactual:
    """Changes keyed by feature name, in schema order, as ``(old, new)`` pairs.

    ``directions`` holds the sign of each continuous change (+1 or -1).
    """

    query: np.ndarray
    changes: dict[str, tuple[float, float]]
    target_class: int
    valid: bool
    p_target: float
    proximity: ProximityScore
    directions: dict[str, int] = field(default_factory=dict)
    query_id: int | None = None

    @property
    def sparsity(self) -> int:
        return len(self.changes)

    def apply(self, schema: FeatureSchema) -> np.ndarray:
        x = np.array(self.query, dtype=float)
        for name, (_, new) in self.changes.items():
            x[schema.index(name)] = new
        return x

    def to_dict(self, schema: FeatureSchema) -> dict[str, Any]:
        changes = {}
        for name, (old, new) in self.changes.items():
            j = schema.index(name)
            changes[name] = {"from": _display(schema, j, old), "to": _display(schema, j, new)}
        return {
            "query_id": self.query_id,
            "target_class": schema.class_names[self.target_class],
            "valid": self.valid,
            "p_target": self.p_target,
            "proximity": {
                "continuous": self.proximity.continuous_part,
                "categorical": self.proximity.categorical_part,
                "total": self.proximity.total,
            },
            "sparsity": self.sparsity,
            "changes": changes,
            "directions": dict(self.directions),
        }


def _display(schema: FeatureSchema, j: int, v: float):
    spec = schema.features[j]
    return spec.categories[int(v)] if spec.is_categorical else _plain(v)


def _is_valid(proba: np.ndarray, target: int, threshold: float) -> np.ndarray:
    """Target probability clears the threshold and the predicted class is the target."""
    proba = np.atleast_2d(proba)
    pred = (proba[:, 1] > proba[:, 0]).astype(np.int64)
    return (proba[:, target] >= threshold) & (pred == target)


def _build(query, x, target, p_target, valid, stats, query_id) -> Counterfactual:
    schema = stats.schema
    changes, directions = {}, {}
    for j in np.flatnonzero(x != query):
        spec = schema.features[j]
        changes[spec.name] = (float(query[j]), float(x[j]))
        if not spec.is_categorical:
            directions[spec.name] = 1 if x[j] > query[j] else -1
    return Counterfactual(
        query=np.array(query, dtype=float),
        changes=changes,
        target_class=target,
        valid=bool(valid),
        p_target=float(p_target),
        proximity=proximity(query, changes, stats),
        directions=directions,
        query_id=query_id,
    )


def sample_candidates(
    query: np.ndarray, stats: FeatureStats, config: CfSearchConfig, rng: np.random.Generator,
) -> np.ndarray:
    """Random perturbations of ``query``: one row per draw.

    Each draw changes a uniformly random subset of actionable features.
    Continuous values come uniformly from the training range (rounded to the
    feature's observed precision); categoricals from the other categories.
    """
    schema = stats.schema
    actionable = schema.actionable_indices
    if not actionable:
        raise NoActionableFeatures("schema marks no feature as actionable")
    hi = len(actionable) if config.max_features_changed is None else min(
        config.max_features_changed, len(actionable)
    )
    lo = min(config.min_features_changed, hi)
    out = np.tile(query, (config.n_samples, 1))
    for i in range(config.n_samples):
        size = int(rng.integers(lo, hi + 1))
        for j in rng.choice(actionable, size=size, replace=False):
            spec = schema.features[j]
            if spec.is_categorical:
                cur = int(query[j])
                v = int(rng.integers(0, len(spec.categories) - 1))
                out[i, j] = v + (v >= cur)
            else:
                v = rng.uniform(stats.minimum[j], stats.maximum[j])
                out[i, j] = round(v, stats.decimals[j])
    return out


def generate_single_cf(
    model: Model,
    query,
    target: int,
    stats: FeatureStats,
    config: CfSearchConfig | None = None,
    query_id: int | None = None,
) -> Counterfactual:
    config = config or CfSearchConfig()
    query = stats.schema.check_instance(query)
    if model.predict(query) == target:
        raise InputError("query is already predicted as the target class")
    rng = np.random.default_rng(config.seed)
    cands = sample_candidates(query, stats, config, rng)
    proba = model.predict_proba_many(cands)
    n_changed = (cands != query).sum(axis=1)
    ok = _is_valid(proba, target, config.stopping_threshold)
    ok &= n_changed >= config.min_features_changed
    if ok.any():
        # argmin returns the earliest draw among equal proximities
        prox = np.where(ok, proximity_rows(query, cands, stats), np.inf)
        best = int(np.argmin(prox))
        cf = _build(query, cands[best], target, proba[best, target], True, stats, query_id)
        return posthoc_sparsify(model, cf, stats, config)
    attempt = np.where(n_changed > 0, proba[:, target], -np.inf)
    best = int(np.argmax(attempt))
    return _build(query, cands[best], target, proba[best, target], False, stats, query_id)


def posthoc_sparsify(
    model: Model, cf: Counterfactual, stats: FeatureStats, config: CfSearchConfig | None = None,
) -> Counterfactual:
    """Revert changes back to the query value while the target class holds.

    Smallest MAD-scaled change first (categoricals count 1, ties by feature
    position). Continuous changes above the ``sparsity_param`` quantile of the
    candidate's scaled changes are never reverted, and the result keeps at
    least ``min_features_changed`` changes.
    """
    config = config or CfSearchConfig()
    if not cf.valid:
        raise InvalidCounterfactual("only valid counterfactuals can be sparsified")
    schema = stats.schema
    if not cf.changes:
        return cf
    idx = [schema.index(n) for n in cf.changes]
    scaled = {
        j: 1.0 if schema.features[j].is_categorical
        else abs(new - old) / stats.scale[j]
        for j, (old, new) in zip(idx, cf.changes.values())
    }
    cutoff = float(np.quantile(list(scaled.values()), config.sparsity_param))
    revertible = [
        j for j in idx if schema.features[j].is_categorical or scaled[j] <= cutoff
    ]
    revertible.sort(key=lambda j: (scaled[j], j))

    x = cf.apply(schema)
    p_target = cf.p_target
    n_changed = len(idx)
    for j in revertible:
        if n_changed <= config.min_features_changed:
            break
        trial = x.copy()
        trial[j] = cf.query[j]
        proba = model.predict_proba_many(trial[None, :])
        if _is_valid(proba, cf.target_class, config.stopping_threshold)[0]:
            x = trial
            p_target = float(proba[0, cf.target_class])
            n_changed -= 1
    if n_changed == len(idx):
        return cf
    return _build(cf.query, x, cf.target_class, p_target, True, stats, cf.query_id)
