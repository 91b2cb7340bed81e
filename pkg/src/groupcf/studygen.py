"""Matched single/group explanation materials for sets of related instances."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Sequence

import numpy as np

from .errors import ExhaustedSeeds, ExhaustionError, InvalidCounterfactual, NoSolutionError, ZeroVariance
from .group import GroupConfig, GroupCounterfactual, group_explain
from .metrics import TTestResult, paired_t_test
from .model import Model
from .neighbors import eligible_seeds
from .singlecf import CfSearchConfig, Counterfactual
from .tabular import Dataset, FeatureSchema, FeatureStats

SINGLE, GROUP, GROUP_HINT = "single", "group", "group-hint"
STYLES = (SINGLE, GROUP, GROUP_HINT)

POSSESSIVE = {"he": "his", "she": "her", "they": "their"}

HINT = "{name} is part of a group of people with similar characteristics."

FEMALE_NAMES = (
    "Mary", "Sarah", "Anne", "Emma", "Claire", "Laura", "Kate", "Joan", "Helen", "Ruth",
    "Alice", "Grace", "Julia", "Nora", "Eva", "Lucy", "Rose", "Ella", "Amy", "Jane",
    "Maeve", "Orla", "Sinead", "Fiona", "Aoife", "Niamh", "Ciara", "Eileen", "Molly", "Tara",
    "Hannah", "Megan", "Chloe", "Sophie", "Olivia", "Isabel", "Diane", "Carol", "Linda", "Susan",
)
MALE_NAMES = (
    "Tom", "Joe", "John", "Tim", "Paul", "Mark", "David", "Peter", "Sean", "Colm",
    "Brian", "Kevin", "Liam", "Adam", "Eric", "Frank", "Henry", "Luke", "Owen", "Ray",
    "Conor", "Declan", "Eoin", "Fergal", "Cian", "Niall", "Ronan", "Shane", "Dara", "Oisin",
    "George", "Harry", "Jack", "Simon", "Martin", "Philip", "Gavin", "Alan", "Neil", "Victor",
)
NEUTRAL_NAMES = tuple(n for pair in zip(MALE_NAMES, FEMALE_NAMES) for n in pair)


def person_for(index: int, x: Sequence[float], schema: FeatureSchema) -> tuple[str, str]:
    """Deterministic (name, pronoun) for item ``index``; gendered when a sex feature exists."""
    if "sex" in schema.names:
        spec = schema.features[schema.index("sex")]
        value = spec.categories[int(x[schema.index("sex")])].lower()
        if value in ("female", "woman"):
            return FEMALE_NAMES[index % len(FEMALE_NAMES)], "she"
        if value in ("male", "man"):
            return MALE_NAMES[index % len(MALE_NAMES)], "he"
    return NEUTRAL_NAMES[index % len(NEUTRAL_NAMES)], "they"


def render_explanation(
    item: Sequence[float],
    cf: Counterfactual | GroupCounterfactual,
    style: str,
    schema: FeatureSchema,
    name: str = "This person",
    pronoun: str = "they",
    verb: str = "would have earned",
) -> str:
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}")
    item = np.asarray(item, dtype=float)
    if isinstance(cf, GroupCounterfactual):
        hits = np.flatnonzero(np.all(cf.pool.instances == item, axis=1))
        if len(hits) == 0 or not cf.per_instance_valid[hits[0]]:
            raise InvalidCounterfactual("the group counterfactual does not cover this instance")
        changes = cf.changes_for(int(hits[0]), schema)
    else:
        if not cf.valid:
            raise InvalidCounterfactual("cannot render an invalid counterfactual")
        changes = cf.changes
    if not changes:
        raise InvalidCounterfactual("counterfactual changes nothing for this instance")

    clauses = [
        f"{schema.features[j].label} had been {schema.format_value(j, new)}"
        for j, (_, new) in sorted((schema.index(n), c) for n, c in changes.items())
    ]
    # the first clause follows the name, later ones take the possessive pronoun
    possessive = POSSESSIVE.get(pronoun, pronoun)
    clauses[1:] = [f"{possessive} {c}" for c in clauses[1:]]
    joined = clauses[0] if len(clauses) == 1 else ", ".join(clauses[:-1]) + " and " + clauses[-1]
    text = f"If {name}'s {joined}, {pronoun} {verb} {schema.class_names[cf.target_class]}."
    if style == GROUP_HINT:
        text = HINT.format(name=name) + " " + text
    return text


@dataclass(frozen=True)
class StudyConfig:
    n_sets: int = 8
    pool_size: int = 5
    margin: float = 0.15
    k: int = 2
    seed: int = 0
    n_samples: int = 1000
    n_candidates: int = 100
    mode: str = "rows"
    bins: int = 10
    max_draws_per_set: int = 10

    def group_config(self) -> GroupConfig:
        # singles change exactly k features so both explanation forms match on sparsity
        cf = CfSearchConfig(
            n_samples=self.n_samples, seed=self.seed,
            min_features_changed=self.k, max_features_changed=self.k,
        )
        return GroupConfig(
            pool_size=self.pool_size, k=self.k, n_candidates=self.n_candidates,
            mode=self.mode, seed=self.seed, cf=cf, require_full_sparsity=True,
        )


@dataclass(frozen=True, eq=False)
class ItemSet:
    set_id: int
    seed_id: int
    group: GroupCounterfactual
    singles: tuple[Counterfactual, ...]
    labels: tuple[int, ...]
    names: tuple[str, ...]
    pronouns: tuple[str, ...]

    @property
    def item_ids(self) -> list[int]:
        return [int(i) for i in self.group.pool.ids]

    def texts(self, schema: FeatureSchema, i: int) -> dict[str, str]:
        x = self.group.pool.instances[i]
        person = dict(name=self.names[i], pronoun=self.pronouns[i])
        return {
            SINGLE: render_explanation(x, self.singles[i], SINGLE, schema, **person),
            GROUP: render_explanation(x, self.group, GROUP, schema, **person),
            GROUP_HINT: render_explanation(x, self.group, GROUP_HINT, schema, **person),
        }

    def to_dict(self, schema: FeatureSchema) -> dict[str, Any]:
        g = self.group.to_dict(schema)
        items = []
        for i, x in enumerate(self.group.pool.instances):
            single = self.singles[i].to_dict(schema)
            items.append({
                "id": self.item_ids[i],
                "name": self.names[i],
                "instance": schema.describe(x),
                "label": schema.class_names[self.labels[i]],
                "prediction": schema.class_names[self.group.pool.cls],
                "single": single,
                "group": {
                    "changes": {
                        n: {"from": schema.format_value(schema.index(n), o),
                            "to": schema.format_value(schema.index(n), v)}
                        for n, (o, v) in self.group.changes_for(i, schema).items()
                    },
                    "valid": self.group.per_instance_valid[i],
                    "proximity": self.group.proximity_per_instance[i],
                    "sparsity": self.group.sparsity_for(i, schema),
                },
                "texts": self.texts(schema, i),
            })
        return {
            "set_id": self.set_id,
            "seed_id": self.seed_id,
            "class": schema.class_names[self.group.pool.cls],
            "target_class": g["target_class"],
            "key_features": g["key_features"],
            "substitution": g["substitution"],
            "substitution_origin": g["substitution_origin"],
            "coverage": g["coverage"],
            "region": g["region"],
            "items": items,
        }


@dataclass(frozen=True)
class MatchReport:
    single_proximity: tuple[float, ...]
    group_proximity: tuple[float, ...]
    sparsity_pairs: tuple[tuple[int, int], ...]
    t_test: TTestResult | None
    note: str = ""

    @property
    def sparsity_equal(self) -> bool:
        return all(a == b for a, b in self.sparsity_pairs)

    @property
    def not_significant(self) -> bool | None:
        if self.t_test is None:
            return None
        return self.t_test.p_two_tailed > 0.05

    def summary(self) -> str:
        if self.t_test is None:
            return f"t-test unavailable: {self.note}"
        verdict = "not significantly different" if self.not_significant else "significantly different"
        return f"{self.t_test.summary()} ({verdict} at .05)"

    def to_dict(self) -> dict[str, Any]:
        t = self.t_test
        return {
            "n_pairs": len(self.single_proximity),
            "single_proximity": list(self.single_proximity),
            "group_proximity": list(self.group_proximity),
            "t_test": None if t is None else {"t": t.t, "df": t.df, "p_two_tailed": t.p_two_tailed},
            "p_above_05": self.not_significant,
            "sparsity_pairs": [list(p) for p in self.sparsity_pairs],
            "sparsity_equal": self.sparsity_equal,
            "summary": self.summary(),
            "note": self.note,
        }


def match_report(single: Sequence[float], group: Sequence[float], sparsity_pairs=()) -> MatchReport:
    try:
        t = paired_t_test(single, group)
        note = ""
    except ZeroVariance as exc:
        t, note = None, str(exc)
    return MatchReport(
        tuple(float(v) for v in single), tuple(float(v) for v in group),
        tuple((int(a), int(b)) for a, b in sparsity_pairs), t, note,
    )


def _try_set(train_ok, preds_ok, model, stats, x, rid, gconfig, k):
    try:
        g = group_explain(model, train_ok, stats, x, gconfig, query_id=rid, predictions=preds_ok)
    except (NoSolutionError, ExhaustionError):
        return None
    singles = g.key_features.singles
    schema = stats.schema
    if g.coverage < 1.0 or len(g.key_features.features) != k:
        return None
    if not all(cf.valid and cf.sparsity == k for cf in singles):
        return None
    if any(g.sparsity_for(i, schema) != k for i in range(g.pool.size)):
        return None
    return g


def build_item_sets(
    train: Dataset, model: Model, stats: FeatureStats, config: StudyConfig | None = None,
) -> tuple[list[ItemSet], MatchReport]:
    """Seed, pool and explain ``n_sets`` disjoint item sets, balanced across classes.

    Seeds are correctly classified rows whose class probabilities lie within
    ``margin``. Neighbors and region rows are restricted to correctly
    classified training rows. A seed is discarded (and another drawn) unless
    its group counterfactual covers the whole pool with exactly ``k``
    changes per item and every item has a valid ``k``-change single.
    """
    config = config or StudyConfig()
    gconfig = config.group_config()
    schema = train.schema
    preds = model.predict_many(train.X)
    correct = np.flatnonzero(preds == train.y)
    train_ok = train.subset(correct)
    preds_ok = preds[correct]
    label_of = dict(zip(train.row_ids.tolist(), train.y.tolist()))

    quota = [math.ceil(config.n_sets / 2), config.n_sets // 2]
    queues = [list(q) for q in eligible_seeds(train, model, config.margin, config.seed)]
    max_draws = config.max_draws_per_set * config.n_sets
    built = [0, 0]
    order: list[tuple[int, GroupCounterfactual]] = []
    used: set[int] = set()
    draws = 0

    def next_seed(c: int) -> int | None:
        while queues[c]:
            pos = queues[c].pop(0)
            if int(train.row_ids[pos]) not in used:
                return pos
        return None

    while built[0] < quota[0] or built[1] < quota[1]:
        progressed = False
        for c in (0, 1):
            if built[c] >= quota[c]:
                continue
            pos = next_seed(c)
            if pos is None:
                continue
            if draws >= max_draws:
                raise ExhaustedSeeds(len(order), config.n_sets, draws)
            draws += 1
            progressed = True
            rid = int(train.row_ids[pos])
            g = _try_set(train_ok, preds_ok, model, stats, train.X[pos], rid, gconfig, config.k)
            if g is None or used.intersection(g.pool.ids):
                continue
            used.update(int(i) for i in g.pool.ids)
            built[c] += 1
            order.append((rid, g))
        if not progressed:
            raise ExhaustedSeeds(len(order), config.n_sets, draws)

    item_sets = []
    for set_id, (rid, g) in enumerate(order):
        names, pronouns = [], []
        for i, x in enumerate(g.pool.instances):
            n, p = person_for(set_id * g.pool.size + i, x, schema)
            names.append(n)
            pronouns.append(p)
        item_sets.append(ItemSet(
            set_id=set_id,
            seed_id=rid,
            group=g,
            singles=g.key_features.singles,
            labels=tuple(label_of[int(i)] for i in g.pool.ids),
            names=tuple(names),
            pronouns=tuple(pronouns),
        ))

    single_prox, group_prox, sparsity_pairs = [], [], []
    for s in item_sets:
        for i, cf in enumerate(s.singles):
            single_prox.append(cf.proximity.total)
            group_prox.append(s.group.proximity_per_instance[i])
            sparsity_pairs.append((cf.sparsity, s.group.sparsity_for(i, schema)))
    return item_sets, match_report(single_prox, group_prox, sparsity_pairs)


def study_document(item_sets: Sequence[ItemSet], report: MatchReport, schema: FeatureSchema) -> dict[str, Any]:
    return {
        "item_sets": [s.to_dict(schema) for s in item_sets],
        "match_report": report.to_dict(),
    }


def config_dict(config: StudyConfig) -> dict[str, Any]:
    return asdict(config)
