"""Build the bundled Adult subsample and its schema from the raw UCI files.

Usage::

    python scripts/prepare_adult.py adult.data adult.test src/groupcf/data

Rows with missing values ("?") are dropped; ``adult.data`` and ``adult.test``
are concatenated, and a seeded sample of 10,000 rows is kept in file order.
"""

import argparse
import csv
import json
from pathlib import Path

import numpy as np

RAW_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country", "income",
]

# (column, kind, display name, actionable)
KEPT = [
    ("age", "continuous", "Age", False),
    ("workclass", "categorical", "Employment type", True),
    ("marital-status", "categorical", "Marital status", True),
    ("occupation", "categorical", "Occupation", True),
    ("race", "categorical", "Race", False),
    ("sex", "categorical", "Gender", False),
    ("capital-gain", "continuous", "Capital gain", True),
    ("capital-loss", "continuous", "Capital loss", True),
    ("hours-per-week", "continuous", "Weekly hours", True),
    ("native-country", "categorical", "Country of birth", False),
]
CLASSES = ["Under $50k", "Over $50k"]


def read_raw(path):
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh, skipinitialspace=True):
            if len(rec) != len(RAW_COLUMNS):
                continue  # comment line / trailing blank
            rec = [v.strip() for v in rec]
            if "?" in rec:
                continue
            row = dict(zip(RAW_COLUMNS, rec))
            row["label"] = CLASSES[1] if row["income"].rstrip(".") == ">50K" else CLASSES[0]
            rows.append(row)
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("train_file")
    parser.add_argument("test_file")
    parser.add_argument("out_dir")
    parser.add_argument("--rows", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rows = read_raw(args.train_file) + read_raw(args.test_file)
    keep = np.sort(np.random.default_rng(args.seed).choice(len(rows), args.rows, replace=False))
    sample = [rows[i] for i in keep]

    features = []
    for name, kind, display, actionable in KEPT:
        spec = {"name": name, "kind": kind, "display": display, "actionable": actionable}
        if kind == "categorical":
            spec["categories"] = sorted({r[name] for r in rows})
        features.append(spec)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "adult_schema.json", "w") as fh:
        json.dump({"classes": CLASSES, "features": features}, fh, indent=2)
        fh.write("\n")
    with open(out / "adult_10k.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([name for name, *_ in KEPT] + ["label"])
        for r in sample:
            writer.writerow([r[name] for name, *_ in KEPT] + [r["label"]])
    print(f"kept {len(sample)} of {len(rows)} complete rows")


if __name__ == "__main__":
    main()
