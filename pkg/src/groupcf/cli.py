"""Command-line entry point: ``groupcf <command> [options]``.

Exit codes: 0 success, 2 input error, 3 no solution, 4 resource exhaustion.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

from . import __version__
from .errors import GroupCFError, InputError, NoValidCandidate, SelectorNotFound
from .group import GroupConfig, group_explain
from .metrics import gap_score
from .model import TrainConfig, accuracy, load_model, save_model, train_boosted
from .singlecf import CfSearchConfig, generate_single_cf
from .studygen import (
    GROUP,
    GROUP_HINT,
    SINGLE,
    StudyConfig,
    build_item_sets,
    match_report,
    person_for,
    render_explanation,
    study_document,
)
from .tabular import FeatureSchema, compute_stats, load_dataset, split

FORMAT_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    schema: str | None = None
    data: str | None = None
    model: str | None = None
    seed: int = 0
    test_fraction: float = 0.2
    pool_size: int = 5
    k: int = 2
    samples: int = 1000
    candidates: int = 100
    margin: float = 0.15
    bins: int = 10
    mode: str = "rows"
    trace: bool = False
    out: str | None = None

    def __post_init__(self):
        for name in ("pool_size", "k", "samples", "candidates", "bins"):
            if getattr(self, name) < 1:
                raise InputError(f"--{name.replace('_', '-')} must be positive")


def _default_seed() -> int:
    raw = os.environ.get("GROUPCF_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"GROUPCF_SEED must be an integer, got {raw!r}") from None


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {path}")
    return p


def _emit(doc: dict[str, Any], out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _document(cfg: RunConfig, command: str, body: dict[str, Any]) -> dict[str, Any]:
    return {"format_version": FORMAT_VERSION, "command": command, "config": asdict(cfg), **body}


def _load_split(cfg: RunConfig):
    schema = FeatureSchema.from_json(_require_file(cfg.schema, "schema"))
    data = load_dataset(_require_file(cfg.data, "data"), schema)
    train, test = split(data, cfg.test_fraction, cfg.seed)
    return schema, train, test, compute_stats(train, cfg.bins)


def _select(train, row: int):
    if not 0 <= row < len(train):
        raise SelectorNotFound(f"row {row} is outside the training split (0..{len(train) - 1})")
    return train.X[row], int(train.row_ids[row])


def cmd_train(cfg: RunConfig, args) -> int:
    if not cfg.model:
        raise InputError("--model (output path) is required")
    schema, train, test, _ = _load_split(cfg)
    model = train_boosted(
        train, TrainConfig(n_trees=args.trees, learning_rate=args.learning_rate,
                           max_depth=args.max_depth, seed=cfg.seed)
    )
    save_model(model, cfg.model)
    acc = accuracy(model, test)
    body = {
        "accuracy": acc,
        "train_accuracy": accuracy(model, train),
        "n_train": len(train),
        "n_test": len(test),
        "model_file": cfg.model,
        "model_config": asdict(model.config),
    }
    _emit(_document(cfg, "train", body), cfg.out)
    # stdout carries the JSON itself when no --out is given
    print(f"held-out accuracy: {acc:.4f}", file=sys.stderr if not cfg.out else sys.stdout)
    return 0


def _load_all(cfg: RunConfig):
    model = load_model(_require_file(cfg.model, "model"))
    return (model, *_load_split(cfg))


def cmd_predict(cfg: RunConfig, args) -> int:
    model, schema, train, _, _ = _load_all(cfg)
    x, rid = _select(train, args.row)
    p = model.predict_proba(x)
    body = {
        "row": args.row,
        "row_id": rid,
        "instance": schema.describe(x),
        "label": schema.class_names[int(train.y[args.row])],
        "prediction": schema.class_names[model.predict(x)],
        "proba": {schema.class_names[0]: p[0], schema.class_names[1]: p[1]},
    }
    _emit(_document(cfg, "predict", body), cfg.out)
    return 0


def _cf_config(cfg: RunConfig) -> CfSearchConfig:
    return CfSearchConfig(n_samples=cfg.samples, seed=cfg.seed)


def cmd_explain(cfg: RunConfig, args) -> int:
    model, schema, train, _, stats = _load_all(cfg)
    x, rid = _select(train, args.row)
    target = 1 - model.predict(x)
    cf = generate_single_cf(model, x, target, stats, _cf_config(cfg), rid)
    name, pronoun = person_for(args.row, x, schema)
    body = {
        "row": args.row,
        "instance": schema.describe(x),
        "prediction": schema.class_names[1 - target],
        "counterfactual": cf.to_dict(schema),
        "text": render_explanation(x, cf, SINGLE, schema, name, pronoun) if cf.valid else None,
    }
    _emit(_document(cfg, "explain", body), cfg.out)
    return 0


def cmd_group_explain(cfg: RunConfig, args) -> int:
    model, schema, train, _, stats = _load_all(cfg)
    x, rid = _select(train, args.row)
    gconfig = GroupConfig(
        pool_size=cfg.pool_size, k=cfg.k, n_candidates=cfg.candidates, mode=cfg.mode,
        seed=cfg.seed, cf=_cf_config(cfg), trace=cfg.trace,
    )
    try:
        g = group_explain(model, train, stats, x, gconfig, query_id=rid)
    except NoValidCandidate as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostic, sort_keys=True), file=sys.stderr)
        return exc.exit_code
    texts = []
    for i, inst in enumerate(g.pool.instances):
        if not g.per_instance_valid[i] or not g.changes_for(i, schema):
            texts.append(None)
            continue
        name, pronoun = person_for(i, inst, schema)
        texts.append({
            GROUP: render_explanation(inst, g, GROUP, schema, name, pronoun),
            GROUP_HINT: render_explanation(inst, g, GROUP_HINT, schema, name, pronoun),
        })
    doc = g.to_dict(schema)
    doc["sparsity"] = len(g.key_features.features)
    doc["texts"] = texts
    doc["row"] = args.row
    _emit(_document(cfg, "group-explain", doc), cfg.out)
    return 0


def cmd_study_items(cfg: RunConfig, args) -> int:
    model, schema, train, _, stats = _load_all(cfg)
    study = StudyConfig(
        n_sets=args.n_sets, pool_size=cfg.pool_size, margin=cfg.margin, k=cfg.k,
        seed=cfg.seed, n_samples=cfg.samples, n_candidates=cfg.candidates, mode=cfg.mode,
        bins=cfg.bins, max_draws_per_set=args.max_draws_per_set,
    )
    sets, report = build_item_sets(train, model, stats, study)
    doc = study_document(sets, report, schema)
    doc["n_items"] = sum(len(s.item_ids) for s in sets)
    _emit(_document(cfg, "study-items", doc), cfg.out)
    print(report.summary(), file=sys.stderr if not cfg.out else sys.stdout)
    return 0


def _read_json(path: str, what: str) -> Any:
    p = _require_file(path, what)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


def _item_sets(doc: Any) -> list[dict[str, Any]]:
    if isinstance(doc, dict):
        doc = doc.get("item_sets")
    if not isinstance(doc, list):
        raise InputError("item-set file has no item_sets array")
    return doc


def cmd_gap_score(cfg: RunConfig, args) -> int:
    ordering = _read_json(args.ordering, "ordering")
    if isinstance(ordering, dict):
        ordering = ordering.get("ordering")
    if not isinstance(ordering, list):
        raise InputError("ordering file must be a JSON list of item ids")
    sets = _item_sets(_read_json(args.items, "items"))
    scores = []
    try:
        for s in sets:
            ids = [item["id"] for item in s["items"]]
            scores.append({"set_id": s["set_id"], "gap_score": gap_score(ordering, ids)})
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed item-set record: {exc!r}") from exc
    mean = sum(r["gap_score"] for r in scores) / len(scores) if scores else None
    _emit(_document(cfg, "gap-score", {"scores": scores, "mean": mean}), cfg.out)
    return 0


def cmd_match_check(cfg: RunConfig, args) -> int:
    doc = _read_json(args.items, "items")
    single, group, sparsity = [], [], []
    try:
        for s in _item_sets(doc):
            for item in s["items"]:
                single.append(item["single"]["proximity"]["total"])
                group.append(item["group"]["proximity"])
                sparsity.append((item["single"]["sparsity"], item["group"]["sparsity"]))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed item-set record: {exc!r}") from exc
    report = match_report(single, group, sparsity)
    _emit(_document(cfg, "match-check", {"match_report": report.to_dict()}), cfg.out)
    print(report.summary(), file=sys.stderr if not cfg.out else sys.stdout)
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "explain": cmd_explain,
    "group-explain": cmd_group_explain,
    "study-items": cmd_study_items,
    "gap-score": cmd_gap_score,
    "match-check": cmd_match_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--schema", help="schema JSON file")
    common.add_argument("--data", help="dataset CSV file (needs a 'label' column)")
    common.add_argument("--model", help="model JSON file")
    common.add_argument("--seed", type=int, default=None, help="default: $GROUPCF_SEED or 0")
    common.add_argument("--test-fraction", type=float, default=0.2)
    common.add_argument("--pool-size", type=int, default=5)
    common.add_argument("--k", type=int, default=2, help="key features in a group explanation")
    common.add_argument("--samples", type=int, default=1000, help="random draws per single counterfactual")
    common.add_argument("--candidates", type=int, default=100, help="candidate substitutions (rows mode)")
    common.add_argument("--margin", type=float, default=0.15)
    common.add_argument("--bins", type=int, default=10, help="quantile bins for Hamming distance")
    common.add_argument("--mode", choices=("rows", "medoids"), default="rows")
    common.add_argument("--trace", action="store_true")
    common.add_argument("--out", help="write JSON here instead of stdout")

    parser = argparse.ArgumentParser(
        prog="groupcf", description="Single and group counterfactual explanations for tabular data."
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train the boosted-tree model")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--max-depth", type=int, default=3)
    for name, text in (
        ("predict", "class probabilities for one row"),
        ("explain", "single counterfactual for one row"),
        ("group-explain", "group counterfactual for one row and its like neighbors"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--row", type=int, required=True, help="0-based training-split row")
    p = sub.add_parser("study-items", parents=[common], help="build matched item sets")
    p.add_argument("--n-sets", type=int, default=8)
    p.add_argument("--max-draws-per-set", type=int, default=10)
    p = sub.add_parser("gap-score", parents=[common], help="gap score of each item set in an ordering")
    p.add_argument("--ordering", required=True, help="JSON list of item ids")
    p.add_argument("--items", required=True, help="item-set file from study-items")
    p = sub.add_parser("match-check", parents=[common], help="paired t-test on an item-set file")
    p.add_argument("--items", required=True, help="item-set file from study-items")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(
            schema=args.schema, data=args.data, model=args.model,
            seed=args.seed if args.seed is not None else _default_seed(),
            test_fraction=args.test_fraction, pool_size=args.pool_size, k=args.k,
            samples=args.samples, candidates=args.candidates, margin=args.margin,
            bins=args.bins, mode=args.mode, trace=args.trace, out=args.out,
        )
        return COMMANDS[args.command](cfg, args)
    except GroupCFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
