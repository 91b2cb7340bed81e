import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupcf.errors import (
    AllSinglesFailed,
    EmptyContrastClass,
    InputError,
    InsufficientNeighbors,
    NoValidCandidate,
    TooFewPoints,
)
from groupcf.group import (
    CandidateSubstitution,
    GroupConfig,
    KeyFeatureSet,
    Region,
    build_region,
    evaluate_candidate,
    group_explain,
    kmedoids,
    sample_candidates,
    tally_key_features,
)
from groupcf.metrics import ProximityScore
from groupcf.model import Model
from groupcf.singlecf import CfSearchConfig, Counterfactual
from groupcf.studygen import render_explanation
from groupcf.tabular import Dataset, FeatureSchema, FeatureSpec, compute_stats

from toys import brute_force_coverage, categorical_schema, grid, pool_of, random_problem, table_model


@pytest.fixture(scope="module")
def census_schema():
    return FeatureSchema(
        (
            FeatureSpec("age", "continuous", actionable=False, display="Age"),
            FeatureSpec("education", "categorical", ("HS-grad", "Bachelors", "Doctorate"), display="Education"),
            FeatureSpec("hours", "continuous", display="Weekly hours"),
            FeatureSpec("capital-gain", "continuous", display="Capital gain"),
        ),
        ("Under $50k", "Over $50k"),
    )


def single(changes, valid=True, directions=None):
    return Counterfactual(np.zeros(4), changes, 1, valid, 0.6, ProximityScore(0, 0), directions or {})


def test_tally_example(census_schema):
    E, H, C, A = "education", "hours", "capital-gain", "age"
    chg = {E: (0, 1), H: (40, 45), C: (0, 5000), A: (30, 40)}
    sets = [{E, H}, {E, H}, {E, C}, {H, A}, {E, H}]
    singles = [single({n: chg[n] for n in s}, directions={n: 1 for n in s if n != E}) for s in sets]
    keys = tally_key_features(singles, census_schema, 2)
    # direct tally oracle
    counts = {n: sum(n in s for s in sets) for n in (E, H, C, A)}
    assert counts == {E: 4, H: 4, C: 1, A: 1}
    assert keys.features == (E, H)
    assert keys.votes == counts
    assert keys.directions == {H: "increase"}


def test_tally_unanimous_and_non_actionable(census_schema):
    pair = {"education": (0, 2), "hours": (30, 50)}
    keys = tally_key_features([single(pair, directions={"hours": 1})] * 5, census_schema, 2)
    assert keys.features == ("education", "hours")
    aged = [single({"age": (30, 50), "capital-gain": (0, 1)}, directions={"age": 1, "capital-gain": 1})] * 3
    keys = tally_key_features(aged + [single({"hours": (40, 30)}, directions={"hours": -1})], census_schema, 2)
    assert keys.features == ("hours", "capital-gain")
    assert keys.directions == {"hours": "decrease", "capital-gain": "increase"}


def test_direction_majority_sign(census_schema):
    singles = [single({"hours": (40, 40 + d)}, directions={"hours": 1}) for d in (7, 10, 23, 12)]
    assert tally_key_features(singles, census_schema, 1).directions == {"hours": "increase"}
    mixed = [single({"hours": (40, 45)}, directions={"hours": 1}), single({"hours": (40, 35)}, directions={"hours": -1})]
    assert tally_key_features(mixed, census_schema, 1).directions == {"hours": "none"}


def test_tally_ignores_failed_singles(census_schema):
    keys = tally_key_features(
        [single({"education": (0, 1)}), single({"hours": (1, 2)}, valid=False)], census_schema, 1
    )
    assert keys.features == ("education",) and keys.failed == 1


def test_region_direction_filter(adult_train, adult_model, adult_schema):
    preds = adult_model.predict_many(adult_train.X)
    j = adult_schema.index("hours-per-week")
    rows = adult_train.X[np.flatnonzero(preds == 0)[:5]]
    pool = pool_of(rows, 0)
    keys = KeyFeatureSet(("occupation", "hours-per-week"), {"hours-per-week": "increase"}, {})
    region = build_region(adult_train, adult_model, 1, keys, pool, preds)
    ref = sorted(rows[:, j])[2]
    oracle = [int(adult_train.row_ids[i]) for i in range(len(adult_train)) if preds[i] == 1 and adult_train.X[i, j] > ref]
    assert region.row_ids.tolist() == oracle
    assert not region.fallback and region.filters["hours-per-week"]["direction"] == "increase"

    none = KeyFeatureSet(("occupation", "hours-per-week"), {"hours-per-week": "none"}, {})
    everything = build_region(adult_train, adult_model, 1, none, pool, preds)
    assert len(everything) == int((preds == 1).sum())


def test_region_fallback_and_empty():
    schema = FeatureSchema((FeatureSpec("h", "continuous"),), ("a", "b"))
    X = np.array([[1.0], [2.0], [3.0]])

    class Below(Model):
        kind, n_features = "below", 1

        def predict_proba_many(self, X):
            p = np.where(np.atleast_2d(X)[:, 0] < 2.5, 0.9, 0.1)
            return np.column_stack([1 - p, p])

    data = Dataset(schema, X, [1, 1, 0], np.arange(3))
    pool = pool_of([[3.0]], 0)
    keys = KeyFeatureSet(("h",), {"h": "increase"}, {})
    region = build_region(data, Below(), 1, keys, pool)
    assert region.fallback and len(region) == 2

    class Never(Below):
        def predict_proba_many(self, X):
            return np.tile([0.9, 0.1], (len(np.atleast_2d(X)), 1))

    with pytest.raises(EmptyContrastClass):
        build_region(data, Never(), 1, keys, pool)


def brute_kmedoids(points, k, scale=1.0):
    best = None
    for combo in itertools.combinations(range(len(points)), k):
        cost = sum(min(abs(p - points[c]) / scale for c in combo) for p in points)
        best = cost if best is None else min(best, cost)
    return best


def test_kmedoids_examples():
    pts = [[1.0], [2.0], [100.0], [101.0]]
    idx, cost = kmedoids(pts, 2, seed=0)
    assert cost == brute_kmedoids([1, 2, 100, 101], 2) == 2
    assert {0, 1} & set(idx) and {2, 3} & set(idx)
    mad = 49.5
    _, scaled = kmedoids(pts, 2, seed=3, scales=[mad])
    assert scaled == pytest.approx(brute_kmedoids([1, 2, 100, 101], 2, mad))

    idx, cost = kmedoids([[1.0], [2.0], [3.0]], 1)
    assert idx == [1] and cost == 2
    idx, cost = kmedoids(pts, 4)
    assert sorted(idx) == [0, 1, 2, 3] and cost == 0
    with pytest.raises(TooFewPoints):
        kmedoids(pts, 5)


@given(st.lists(st.integers(0, 30), min_size=2, max_size=9), st.integers(1, 3), st.integers(0, 50))
@settings(max_examples=80, deadline=None)
def test_kmedoids_near_optimal_and_deterministic(values, k, seed):
    k = min(k, len(values))
    pts = [[float(v)] for v in values]
    idx, cost = kmedoids(pts, k, seed)
    assert len(idx) == k
    assert cost == pytest.approx(sum(min(abs(v - values[i]) for i in idx) for v in values))
    assert cost >= brute_kmedoids(values, k) - 1e-9
    assert (idx, cost) == kmedoids(pts, k, seed)


def test_kmedoids_categorical_mismatch():
    pts = [[0, 0], [0, 0], [0, 1], [2, 2]]
    idx, cost = kmedoids(pts, 1, categorical=[True, True])
    assert idx == [0] and cost == 3


def _region(schema, X):
    X = np.asarray(X, float)
    return Region(schema, 1, X, np.arange(100, 100 + len(X)), {})


def test_sample_candidates_rows():
    schema = categorical_schema([3, 3, 3])
    keys = KeyFeatureSet(("f0", "f2"), {}, {})
    region = _region(schema, [[1, 0, 2], [1, 1, 2], [2, 0, 0], [1, 2, 2], [0, 0, 0]])
    cands = sample_candidates(region, keys, 1000, seed=5)
    values = [tuple(c.values.values()) for c in cands]
    assert sorted(values) == [(0.0, 0.0), (1.0, 2.0), (2.0, 0.0)]
    assert len(set(values)) == len(values)
    for c in cands:
        row = int(c.origin.split(":")[1]) - 100
        assert [region.X[row, 0], region.X[row, 2]] == list(c.values.values())
    # a smaller budget draws a prefix of the same permutation
    small = sample_candidates(region, keys, 2, seed=5)
    assert [c.values for c in small] == [c.values for c in cands[: len(small)]]

    one = sample_candidates(_region(schema, [[2, 1, 0]]), keys, 10, seed=0)
    assert [c.values for c in one] == [{"f0": 2.0, "f2": 0.0}]
    with pytest.raises(EmptyContrastClass):
        sample_candidates(_region(schema, np.empty((0, 3))), keys, 10, seed=0)


def test_sample_candidates_medoids(adult_stats, adult_train):
    keys = KeyFeatureSet(("occupation", "hours-per-week"), {}, {})
    region = Region(adult_train.schema, 1, adult_train.X[:300], adult_train.row_ids[:300], {})
    cands = sample_candidates(region, keys, 100, 0, "medoids", adult_stats, n_medoids=5)
    assert len(cands) == 5
    cols = [adult_train.schema.index(f) for f in keys.features]
    proj = {tuple(r) for r in region.X[:, cols].tolist()}
    assert all(tuple(c.values.values()) in proj for c in cands)
    assert [c.origin for c in cands] == [f"medoid:{i}" for i in range(5)]
    with pytest.raises(InputError):
        sample_candidates(region, keys, 100, 0, "medoids")


def test_evaluate_candidate_ratios():
    schema = categorical_schema([3, 3])
    X = grid([3, 3])
    model = table_model(X, [0.9 if x[0] == 2 and x[1] != 0 else 0.1 for x in X])
    pool = pool_of([[0, 1], [1, 1], [0, 2], [1, 2], [0, 0]], 0)
    valid, cov = evaluate_candidate(model, pool, CandidateSubstitution({"f0": 2.0}, "row:0"), schema)
    assert valid == (True, True, True, True, False) and cov == 0.8
    valid, cov = evaluate_candidate(model, pool, CandidateSubstitution({"f0": 2.0, "f1": 1.0}, "row:0"), schema)
    assert all(valid) and cov == 1.0


@pytest.fixture(scope="module")
def figure_world():
    schema = FeatureSchema(
        (
            FeatureSpec("hours-per-week", "continuous", display="Weekly hours"),
            FeatureSpec("education", "categorical", ("HS-grad", "Bachelor's degree", "Doctorate degree"),
                        display="Education level"),
        ),
        ("Under $50k", "Over $50k"),
    )

    class Earnings(Model):
        kind, n_features = "earnings", 2

        def predict_proba_many(self, X):
            X = np.atleast_2d(X)
            p = np.where((X[:, 0] >= 45) & (X[:, 1] >= 1), 0.85, 0.15)
            return np.column_stack([1 - p, p])

    # Tom, Mary, Joe, John, Sarah
    people = np.array([[43, 0], [40, 0], [22, 0], [38, 1], [30, 0]], float)
    return schema, Earnings(), people


def test_figure_candidate_covers_all_five(figure_world):
    schema, model, people = figure_world
    pool = pool_of(people, 0)
    assert set(model.predict_many(people)) == {0}
    cand = CandidateSubstitution({"hours-per-week": 50.0, "education": 1.0}, "row:0")
    valid, cov = evaluate_candidate(model, pool, cand, schema)
    assert valid == (True,) * 5 and cov == 1.0


def test_group_render_shares_values(figure_world):
    schema, model, people = figure_world
    X = np.vstack([people, [[50, 1], [60, 2], [45, 1]]])
    data = Dataset(schema, X, model.predict_many(X), np.arange(len(X)))
    stats = compute_stats(data)
    pool = pool_of(people, 0)
    g = group_explain(model, data, stats, people[0], GroupConfig(n_candidates=50), pool=pool)
    assert g.coverage == 1.0
    texts = [render_explanation(x, g, "group", schema, name=n, pronoun=p)
             for x, n, p in zip(people, ["Tom", "Mary", "Joe", "John", "Sarah"], ["he", "she", "he", "he", "she"])]
    shared = texts[0].split("had been ")[1].split(" and")[0]
    assert all(f"had been {shared}" in t for t in texts)
    hint = render_explanation(people[2], g, "group-hint", schema, name="Joe", pronoun="he")
    assert hint.startswith("Joe is part of a group of people with similar characteristics. If Joe's")


def _run(schema, data, model, stats, pos, n_candidates, mode="rows", seed=0):
    config = GroupConfig(n_candidates=n_candidates, mode=mode, seed=seed, cf=CfSearchConfig(n_samples=300, seed=seed))
    return group_explain(model, data, stats, data.X[pos], config, query_id=int(data.row_ids[pos]))


def test_exhaustive_matches_brute_force():
    rng = np.random.default_rng(21)
    checked = 0
    while checked < 15:
        schema, data, model, stats = random_problem(rng)
        pos = int(rng.integers(len(data)))
        try:
            g = _run(schema, data, model, stats, pos, len(data))
        except (InsufficientNeighbors, AllSinglesFailed):
            continue
        except NoValidCandidate:
            continue
        best = brute_force_coverage(model, g.pool, g.key_features.features, data, g.target_class)
        assert g.coverage == best
        # coverage recount and the group property
        assert g.coverage == sum(g.per_instance_valid) / g.pool.size
        sub = g.substituted(schema)
        cols = [schema.index(f) for f in g.key_features.features]
        assert (sub[:, cols] == sub[0, cols]).all()
        flips = model.predict_many(sub) == g.target_class
        assert tuple(flips.tolist()) == g.per_instance_valid
        checked += 1


def test_no_valid_candidate():
    schema = categorical_schema([3, 3])
    X = grid([3, 3])
    model = table_model(X, [0.9 if tuple(x) in {(2, 0), (1, 2)} else 0.1 for x in X])
    train = Dataset(schema, np.array([[1, 2], [0, 0], [1, 0], [0, 1]], float), [1, 0, 0, 0], np.arange(4))
    stats = compute_stats(train)
    pool = pool_of([[0, 0], [1, 0]], 0)
    config = GroupConfig(pool_size=2, k=1, cf=CfSearchConfig(n_samples=200))
    with pytest.raises(NoValidCandidate) as err:
        group_explain(model, train, stats, pool.query, config, pool=pool)
    assert err.value.diagnostic["key_features"] == ["f0"]
    assert err.value.diagnostic["region"]["size"] == 1


def test_adult_group_explain_properties(adult_train, adult_model, adult_stats, adult_schema):
    preds = adult_model.predict_many(adult_train.X)
    for pos in (3, 40):
        config = GroupConfig(trace=True)
        g = group_explain(adult_model, adult_train, adult_stats, adult_train.X[pos], config,
                          int(adult_train.row_ids[pos]), predictions=preds)
        assert g.coverage == sum(g.per_instance_valid) / 5
        assert g.substitution.origin.startswith("row:")
        rid = int(g.substitution.origin.split(":")[1])
        row = adult_train.X[np.flatnonzero(adult_train.row_ids == rid)[0]]
        assert preds[np.flatnonzero(adult_train.row_ids == rid)[0]] == g.target_class
        for f, v in g.substitution.values.items():
            assert row[adult_schema.index(f)] == v
        covs = [c["coverage"] for c in g.trace]
        assert covs == sorted(covs, reverse=True) and covs[0] == g.coverage
        again = group_explain(adult_model, adult_train, adult_stats, adult_train.X[pos], config,
                              int(adult_train.row_ids[pos]), predictions=preds)
        assert again.to_dict(adult_schema) == g.to_dict(adult_schema)


def test_more_candidates_never_lower_coverage(adult_train, adult_model, adult_stats):
    preds = adult_model.predict_many(adult_train.X)

    def coverage(pos, m):
        try:
            return group_explain(adult_model, adult_train, adult_stats, adult_train.X[pos],
                                 GroupConfig(n_candidates=m), int(adult_train.row_ids[pos]),
                                 predictions=preds).coverage
        except NoValidCandidate:
            return 0.0

    for pos in (5, 9, 20):
        covs = [coverage(pos, m) for m in (5, 20, 100, 400)]
        assert covs == sorted(covs)
        assert covs[-1] > covs[0]


def test_medoid_mode_runs(adult_train, adult_model, adult_stats):
    g = group_explain(adult_model, adult_train, adult_stats, adult_train.X[3],
                      GroupConfig(mode="medoids"), int(adult_train.row_ids[3]))
    assert g.substitution.origin.startswith("medoid:")
    assert 0 < g.coverage <= 1


def test_config_validation():
    with pytest.raises(InputError):
        GroupConfig(mode="grid")
    with pytest.raises(InputError):
        GroupConfig(k=0)
