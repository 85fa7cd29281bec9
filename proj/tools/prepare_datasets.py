#!/usr/bin/env python3
# Copyright 2026 The cfproto Authors.
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Materializes the tabular datasets used by the experiment configs.

Sources are packages that bundle the raw files, so no dataset host needs to
be reachable:

  pima    MASS::Pima.tr + Pima.te (rdatasets wheel), 532 complete rows
  cancer  sklearn's bundled Wisconsin diagnostic breast cancer table
  german  UCI german.data (responsibly wheel)
  compas  ProPublica two-year recidivism table (responsibly wheel)
  adult   UCI adult.data + adult.test (responsibly wheel), '?' kept as missing

Each dataset is written as <name>.csv plus <name>.schema.json in --out.
"""

import argparse
import csv
import io
import json
import os
import subprocess
import sys
import tempfile
import zipfile


def fetch_wheel(package, workdir):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d",
         workdir, package],
        check=True)
    for name in os.listdir(workdir):
        if name.startswith(package.replace("-", "_")) and name.endswith(".whl"):
            return zipfile.ZipFile(os.path.join(workdir, name))
    raise RuntimeError(f"no wheel for {package} in {workdir}")


def write(out_dir, name, header, rows, schema):
    with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    schema = dict(schema)
    schema.setdefault("name", name)
    with open(os.path.join(out_dir, f"{name}.schema.json"), "w") as f:
        json.dump(schema, f, indent=2)
        f.write("\n")
    print(f"{name}: {len(rows)} rows")


def levels_of(rows, col):
    return sorted({r[col] for r in rows})


def prepare_pima(out_dir, workdir):
    try:
        import rdatasets  # noqa: F401
    except ImportError:
        fetch_wheel("rdatasets", workdir)
        sys.path.insert(0, next(
            os.path.join(workdir, n) for n in os.listdir(workdir)
            if n.startswith("rdatasets") and n.endswith(".whl")))
    import rdatasets
    frames = [rdatasets.data("MASS", "Pima.tr"), rdatasets.data("MASS", "Pima.te")]
    cols = ["npreg", "glu", "bp", "skin", "bmi", "ped", "age"]
    rows = []
    for df in frames:
        for rec in df.itertuples(index=False):
            d = rec._asdict()
            rows.append([d[c] for c in cols] + [d["type"]])
    write(out_dir, "pima", cols + ["type"], rows, {
        "delimiter": ",",
        "features": [{"name": c, "kind": "continuous"} for c in cols],
        "target": {"name": "type", "classes": ["No", "Yes"]},
    })


def prepare_cancer(out_dir):
    from sklearn.datasets import load_breast_cancer
    bc = load_breast_cancer()
    cols = [n.replace(" ", "_") for n in bc.feature_names]
    names = list(bc.target_names)  # malignant, benign
    rows = [[repr(float(v)) for v in x] + [names[y]]
            for x, y in zip(bc.data, bc.target)]
    write(out_dir, "cancer", cols + ["diagnosis"], rows, {
        "delimiter": ",",
        "features": [{"name": c, "kind": "continuous"} for c in cols],
        "target": {"name": "diagnosis", "classes": ["benign", "malignant"]},
    })


GERMAN_COLUMNS = [
    ("status", "categorical"), ("duration", "continuous"),
    ("credit_history", "categorical"), ("purpose", "categorical"),
    ("credit_amount", "continuous"), ("savings", "categorical"),
    ("employment", "categorical"), ("installment_rate", "continuous"),
    ("personal_status", "categorical"), ("other_debtors", "categorical"),
    ("residence_since", "continuous"), ("property", "categorical"),
    ("age", "continuous"), ("installment_plans", "categorical"),
    ("housing", "categorical"), ("existing_credits", "continuous"),
    ("job", "categorical"), ("people_liable", "continuous"),
    ("telephone", "categorical"), ("foreign_worker", "categorical"),
]


def prepare_german(out_dir, wheel):
    text = wheel.read("responsibly/dataset/german/german.data").decode()
    rows = []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        risk = "low" if parts[20] == "1" else "high"
        rows.append(parts[:20] + [risk])
    features = []
    for i, (name, kind) in enumerate(GERMAN_COLUMNS):
        f = {"name": name, "kind": kind}
        if kind == "categorical":
            f["levels"] = levels_of(rows, i)
        features.append(f)
    write(out_dir, "german", [c for c, _ in GERMAN_COLUMNS] + ["risk"], rows, {
        "delimiter": ",",
        "features": features,
        "target": {"name": "risk", "classes": ["low", "high"]},
    })


def prepare_compas(out_dir, wheel):
    raw = wheel.read("responsibly/dataset/compas/compas-scores-two-years.csv")
    reader = csv.DictReader(io.StringIO(raw.decode()))
    cols = [("sex", "categorical"), ("age", "continuous"),
            ("age_cat", "categorical"), ("race", "categorical"),
            ("juv_fel_count", "continuous"), ("juv_misd_count", "continuous"),
            ("juv_other_count", "continuous"), ("priors_count", "continuous"),
            ("c_charge_degree", "categorical"), ("decile_score", "continuous")]
    rows = []
    for r in reader:
        # Standard ProPublica filtering.
        if not r["days_b_screening_arrest"]:
            continue
        if abs(int(float(r["days_b_screening_arrest"]))) > 30:
            continue
        if r["is_recid"] == "-1" or r["c_charge_degree"] == "O":
            continue
        if r["score_text"] == "N/A":
            continue
        rows.append([r[c] for c, _ in cols]
                    + ["yes" if r["two_year_recid"] == "1" else "no"])
    features = []
    for i, (name, kind) in enumerate(cols):
        f = {"name": name, "kind": kind}
        if kind == "categorical":
            f["levels"] = levels_of(rows, i)
        features.append(f)
    write(out_dir, "compas", [c for c, _ in cols] + ["recidivism"], rows, {
        "delimiter": ",",
        "features": features,
        "target": {"name": "recidivism", "classes": ["no", "yes"]},
    })


def prepare_adult(out_dir, wheel):
    names = ["age", "workclass", "fnlwgt", "education", "education_num",
             "marital_status", "occupation", "relationship", "race", "sex",
             "capital_gain", "capital_loss", "hours_per_week",
             "native_country", "income"]
    keep = [("age", "continuous"), ("workclass", "categorical"),
            ("education", "categorical"), ("marital_status", "categorical"),
            ("occupation", "categorical"), ("relationship", "categorical"),
            ("race", "categorical"), ("sex", "categorical"),
            ("capital_gain", "continuous"), ("capital_loss", "continuous"),
            ("hours_per_week", "continuous"), ("native_country", "categorical")]
    rows = []
    for member in ("adult.data", "adult.test"):
        text = wheel.read(f"responsibly/dataset/adult/{member}").decode()
        for line in text.splitlines():
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != len(names):
                continue
            d = dict(zip(names, parts))
            income = ">50K" if d["income"].startswith(">50K") else "<=50K"
            rows.append([d[c] for c, _ in keep] + [income])
    features = []
    for i, (name, kind) in enumerate(keep):
        f = {"name": name, "kind": kind}
        if kind == "categorical":
            f["levels"] = [v for v in levels_of(rows, i) if v != "?"]
        features.append(f)
    write(out_dir, "adult", [c for c, _ in keep] + ["income"], rows, {
        "delimiter": ",",
        "missing": ["?"],
        "features": features,
        "target": {"name": "income", "classes": ["<=50K", ">50K"]},
    })


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=os.path.join(
        os.path.dirname(os.path.abspath(__file__)), "..", "data"))
    ap.add_argument("datasets", nargs="*",
                    default=["pima", "cancer", "german", "compas", "adult"])
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    with tempfile.TemporaryDirectory() as workdir:
        wheel = None
        for name in args.datasets:
            if name in ("german", "compas", "adult") and wheel is None:
                wheel = fetch_wheel("responsibly", workdir)
            if name == "pima":
                prepare_pima(args.out, workdir)
            elif name == "cancer":
                prepare_cancer(args.out)
            elif name == "german":
                prepare_german(args.out, wheel)
            elif name == "compas":
                prepare_compas(args.out, wheel)
            elif name == "adult":
                prepare_adult(args.out, wheel)
            else:
                ap.error(f"unknown dataset {name}")


if __name__ == "__main__":
    main()
