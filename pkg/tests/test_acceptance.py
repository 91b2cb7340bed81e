"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion along with the measured values.
"""

import json
import math
import time
from bisect import bisect_right

import numpy as np
import pytest

from groupcf.cli import main
from groupcf.errors import AllSinglesFailed, InsufficientNeighbors, NoValidCandidate
from groupcf.group import GroupConfig, group_explain
from groupcf.metrics import paired_t_test, t_two_tailed_p
from groupcf.model import TrainConfig, accuracy, train_boosted
from groupcf.neighbors import nearest_like_neighbors
from groupcf.singlecf import CfSearchConfig, generate_single_cf
from groupcf.studygen import StudyConfig, build_item_sets
from groupcf.tabular import mad, median

from conftest import ADULT_CSV, ADULT_SCHEMA
from test_metrics import integrated_p
from test_tabular import sorted_mad, sorted_median
from toys import brute_force_coverage, random_problem


@pytest.mark.criterion(1, "held-out accuracy on the Adult subsample in [0.80, 0.90], training <= 120 s")
def test_model_fidelity(adult_split, record_property):
    train, test = adult_split
    start = time.perf_counter()
    model = train_boosted(train, TrainConfig())
    elapsed = time.perf_counter() - start
    acc = accuracy(model, test)
    record_property("measured", f"accuracy={acc:.4f}, train_time={elapsed:.1f}s")
    assert 0.80 <= acc <= 0.90
    assert elapsed <= 120


@pytest.mark.criterion(2, "every valid single counterfactual flips the model (>= 200 generated, zero tolerance)")
def test_single_cf_validity(adult_split, adult_model, adult_stats, adult_schema, record_property):
    _, test = adult_split
    rng = np.random.default_rng(2)
    positions = rng.choice(len(test), 220, replace=False)
    n_valid = n_flipped = 0
    for i, pos in enumerate(positions):
        x = test.X[pos]
        target = 1 - adult_model.predict(x)
        cf = generate_single_cf(adult_model, x, target, adult_stats, CfSearchConfig(seed=i))
        if cf.valid:
            n_valid += 1
            n_flipped += adult_model.predict(cf.apply(adult_schema)) == target
    record_property("measured", f"generated={len(positions)}, valid={n_valid}, flipped={n_flipped}")
    assert len(positions) >= 200 and n_valid > 0
    assert n_flipped == n_valid


@pytest.mark.criterion(3, "study configuration: >= 8 full-coverage group CFs, sparsity 2 per item, shared values, <= 300 s")
def test_group_cf_structure(adult_train, adult_model, adult_stats, adult_schema, record_property):
    start = time.perf_counter()
    sets, _ = build_item_sets(adult_train, adult_model, adult_stats, StudyConfig(n_sets=8, pool_size=5, k=2, margin=0.15))
    elapsed = time.perf_counter() - start
    full = 0
    sparsities = set()
    for s in sets:
        g = s.group
        sub = g.substituted(adult_schema)
        cols = [adult_schema.index(f) for f in g.key_features.features]
        shared = bool((sub[:, cols] == sub[0, cols]).all())
        covered = bool((adult_model.predict_many(sub) == g.target_class).all())
        full += shared and covered and g.coverage == 1.0
        sparsities |= {g.sparsity_for(i, adult_schema) for i in range(g.pool.size)}
        sparsities |= {cf.sparsity for cf in s.singles}
    record_property("measured", f"sets={len(sets)}, full_coverage={full}, sparsities={sorted(sparsities)}, time={elapsed:.1f}s")
    assert len(sets) >= 8 and full == len(sets)
    assert sparsities == {2}
    assert elapsed <= 300


@pytest.mark.criterion(4, "exhaustive group_explain reaches the brute-force maximum coverage on >= 20 toys, <= 30 s")
def test_brute_force_optimality(record_property):
    rng = np.random.default_rng(404)
    start = time.perf_counter()
    checked = matched = 0
    while checked < 25:
        schema, data, model, stats = random_problem(rng)
        pos = int(rng.integers(len(data)))
        config = GroupConfig(n_candidates=len(data), cf=CfSearchConfig(n_samples=300, seed=checked))
        qid = int(data.row_ids[pos])
        try:
            g = group_explain(model, data, stats, data.X[pos], config, query_id=qid)
        except (InsufficientNeighbors, AllSinglesFailed):
            continue
        except NoValidCandidate as exc:
            # zero coverage must also be the true maximum
            pool = nearest_like_neighbors(data.X[pos], data, model, stats, 5, qid)
            best = brute_force_coverage(model, pool, exc.diagnostic["key_features"], data, 1 - pool.cls)
            checked += 1
            matched += best == 0
            continue
        best = brute_force_coverage(model, g.pool, g.key_features.features, data, g.target_class)
        checked += 1
        matched += g.coverage == best
    elapsed = time.perf_counter() - start
    record_property("measured", f"problems={checked}, matched={matched}, time={elapsed:.1f}s")
    assert checked >= 20 and matched == checked
    assert elapsed <= 30


def _codes(x, edges, categorical):
    return tuple(int(v) if cat else bisect_right(e, v) for v, e, cat in zip(x, edges, categorical))


@pytest.mark.criterion(5, "nearest-like-neighbor pools equal a linear-scan oracle on 500 queries")
def test_nln_oracle(adult_train, adult_model, adult_stats, record_property):
    data = adult_train.subset(np.arange(1500))
    preds = adult_model.predict_many(data.X).tolist()
    schema = data.schema
    categorical = [f.is_categorical for f in schema.features]
    edges = [list(adult_stats.bin_edges[j][1:-1]) if not c else None for j, c in enumerate(categorical)]
    rows = data.X.tolist()
    ids = data.row_ids.tolist()
    codes = [_codes(r, edges, categorical) for r in rows]

    rng = np.random.default_rng(5)
    queries = rng.choice(len(rows), 500, replace=False).tolist()
    agree = 0
    for q in queries:
        cls = preds[q]
        scored = sorted(
            (sum(a != b for a, b in zip(codes[i], codes[q])), i)
            for i in range(len(rows))
            if preds[i] == cls and i != q and rows[i] != rows[q]
        )
        expected = [ids[i] for _, i in scored[:4]]
        pool = nearest_like_neighbors(data.X[q], data, adult_model, adult_stats, 5, ids[q], np.asarray(preds))
        agree += list(pool.member_ids) == expected
    record_property("measured", f"queries={len(queries)}, agreeing={agree}")
    assert agree == len(queries) == 500


@pytest.mark.criterion(6, "t=4.0, df=2 on diffs [1,1,2]; p within 1e-3 of numerical integration for df 2/10/39; MAD exact on 1,000 vectors")
def test_statistics_oracles(record_property):
    res = paired_t_test([2, 3, 5], [1, 2, 3])
    diffs = [1, 1, 2]
    m = sum(diffs) / 3
    sd = math.sqrt(sum((d - m) ** 2 for d in diffs) / 2)
    hand_t = m / (sd / math.sqrt(3))
    assert res.df == 2 and abs(res.t - hand_t) < 1e-12 and abs(hand_t - 4.0) < 1e-12

    worst = 0.0
    for df in (2, 10, 39):
        for t in (0.5, 1.3, 2.0, 4.0):
            worst = max(worst, abs(t_two_tailed_p(t, df) - integrated_p(t, df)))

    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(1000):
        v = rng.normal(0, 5, int(rng.integers(1, 50))).round(int(rng.integers(0, 3)))
        mismatches += median(v) != sorted_median(v.tolist())
        mismatches += mad(v) != sorted_mad(v.tolist())
    record_property("measured", f"t={res.t:.6f}, df={res.df}, max_p_error={worst:.2e}, mad_mismatches={mismatches}")
    assert worst <= 1e-3
    assert mismatches == 0


@pytest.fixture(scope="module")
def cli_model(tmp_path_factory):
    work = tmp_path_factory.mktemp("acceptance")
    model = work / "model.json"
    assert main(["train", "--schema", str(ADULT_SCHEMA), "--data", str(ADULT_CSV), "--model", str(model),
                 "--out", str(work / "train.json")]) == 0
    return model


@pytest.mark.criterion(7, "study-items reports a paired t-test over 40 pairs with df=39, recomputed by hand, and a correctly computed p > .05 flag")
def test_matching_report(cli_model, tmp_path, record_property):
    out = tmp_path / "items.json"
    code = main(["study-items", "--schema", str(ADULT_SCHEMA), "--data", str(ADULT_CSV),
                 "--model", str(cli_model), "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    single = [it["single"]["proximity"]["total"] for s in doc["item_sets"] for it in s["items"]]
    group = [it["group"]["proximity"] for s in doc["item_sets"] for it in s["items"]]
    d = [a - b for a, b in zip(single, group)]
    n = len(d)
    mean = sum(d) / n
    sd = math.sqrt(sum((x - mean) ** 2 for x in d) / (n - 1))
    t = mean / (sd / math.sqrt(n))
    p = integrated_p(t, n - 1)
    rep = doc["match_report"]
    record_property("measured", f"pairs={n}, {rep['summary']}, hand_t={t:.4f}, integrated_p={p:.4f}")
    assert n == 40 and rep["n_pairs"] == 40
    assert rep["t_test"]["df"] == 39 and rep["summary"].startswith("t(39)=")
    assert abs(rep["t_test"]["t"] - t) <= 1e-9
    assert abs(rep["t_test"]["p_two_tailed"] - p) <= 1e-3
    assert rep["p_above_05"] == (rep["t_test"]["p_two_tailed"] > 0.05)


@pytest.mark.criterion(8, "every CLI command run twice with the same inputs and seed writes byte-identical output")
def test_cli_determinism(cli_model, tmp_path, record_property):
    base = ["--schema", str(ADULT_SCHEMA), "--data", str(ADULT_CSV)]
    items = tmp_path / "items_for_inputs.json"
    assert main(["study-items", *base, "--model", str(cli_model), "--n-sets", "2", "--out", str(items)]) == 0
    ids = [it["id"] for s in json.loads(items.read_text())["item_sets"] for it in s["items"]]
    ordering = tmp_path / "ordering.json"
    ordering.write_text(json.dumps(sorted(ids)))

    commands = {
        "train": ["train", *base, "--model", str(tmp_path / "m.json")],
        "predict": ["predict", *base, "--model", str(cli_model), "--row", "3"],
        "explain": ["explain", *base, "--model", str(cli_model), "--row", "3"],
        "group-explain": ["group-explain", *base, "--model", str(cli_model), "--row", "3", "--trace"],
        "study-items": ["study-items", *base, "--model", str(cli_model), "--n-sets", "2"],
        "gap-score": ["gap-score", "--ordering", str(ordering), "--items", str(items)],
        "match-check": ["match-check", "--items", str(items)],
    }
    identical = []
    for name, argv in commands.items():
        out = tmp_path / f"{name}.json"
        outputs = []
        for _ in range(2):
            assert main([*argv, "--out", str(out)]) == 0
            blob = out.read_bytes()
            if name == "train":
                blob += (tmp_path / "m.json").read_bytes()
            outputs.append(blob)
        if outputs[0] == outputs[1]:
            identical.append(name)
    record_property("measured", f"identical={len(identical)}/{len(commands)}")
    assert identical == list(commands)


@pytest.mark.criterion(9, "human-study outcomes are not reproducible by this package (not applicable)")
def test_human_study_outcomes_not_applicable(record_property):
    import groupcf.studygen as studygen

    # materials only: nothing here models participant responses
    assert not any(hasattr(studygen, n) for n in ("accuracy", "confidence", "satisfaction", "trust"))
    record_property("measured", "not applicable")
