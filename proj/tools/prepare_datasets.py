#!/usr/bin/env python3
"""Writes the tabular datasets used by the examples and acceptance suite as
header-first CSV files with 0/1 labels, plus a JSON schema for each.

Sources (no network access needed when these packages are installed/cached):
  breast_cancer  scikit-learn's bundled copy of UCI WDBC (569 x 30)
  adult          UCI Adult (48842 x 14), as bundled with pytorch-widedeep
  hepatitis      UCI Hepatitis, from a local file passed with --hepatitis
  ilpd           UCI Indian Liver Patient, from a local file passed with --ilpd

Usage: prepare_datasets.py [--out data] [--widedeep-wheel PATH]
                           [--hepatitis hepatitis.data] [--ilpd ilpd.csv]
"""

import argparse
import csv
import io
import json
import os
import zipfile


def write(out_dir, name, header, rows, schema):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name + ".csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    with open(os.path.join(out_dir, name + ".schema.json"), "w") as f:
        json.dump(schema, f, indent=2)
        f.write("\n")
    print(f"{name}: {len(rows)} rows, {len(schema['features'])} features")


def numeric_schema(names, label):
    return {"features": [{"name": n, "kind": "numeric"} for n in names], "label_column": label}


def breast_cancer(out_dir):
    from sklearn.datasets import load_breast_cancer

    data = load_breast_cancer()
    names = [n.replace(" ", "_") for n in data.feature_names]
    # sklearn encodes malignant as 0; the CSV uses 1 for malignant.
    rows = [[repr(float(v)) for v in x] + [int(t == 0)] for x, t in zip(data.data, data.target)]
    write(out_dir, "breast_cancer", names + ["malignant"], rows, numeric_schema(names, "malignant"))


ADULT_NUMERIC = ["age", "fnlwgt", "educational-num", "capital-gain", "capital-loss", "hours-per-week"]


def adult(out_dir, wheel):
    import pandas as pd

    if wheel:
        z = zipfile.ZipFile(wheel)
        df = pd.read_parquet(io.BytesIO(z.read("pytorch_widedeep/datasets/data/adult.parquet.brotli")))
    else:
        from pytorch_widedeep.datasets import load_adult

        df = load_adult(as_frame=True)
    label = (df["income"].str.strip().str.rstrip(".") == ">50K").astype(int)
    df = df.drop(columns=["income"])
    features = []
    for col in df.columns:
        if col in ADULT_NUMERIC:
            features.append({"name": col, "kind": "numeric"})
        else:
            cats = sorted(c for c in df[col].astype(str).str.strip().unique() if c != "?")
            features.append({"name": col, "kind": "categorical", "categories": cats})
    rows = []
    for values, y in zip(df.astype(str).itertuples(index=False), label):
        rows.append([v.strip() for v in values] + [int(y)])
    write(out_dir, "adult", list(df.columns) + ["income"], rows, {"features": features, "label_column": "income"})


HEPATITIS_COLUMNS = [
    "class", "age", "sex", "steroid", "antivirals", "fatigue", "malaise", "anorexia", "liver_big", "liver_firm",
    "spleen_palpable", "spiders", "ascites", "varices", "bilirubin", "alk_phosphate", "sgot", "albumin", "protime",
    "histology",
]


def hepatitis(out_dir, path):
    # UCI hepatitis.data: class (1=DIE, 2=LIVE) first, '?' for missing.
    rows = []
    with open(path) as f:
        for record in csv.reader(f):
            if not record:
                continue
            label = 1 if record[0].strip() == "1" else 0
            rows.append([v.strip() for v in record[1:]] + [label])
    names = HEPATITIS_COLUMNS[1:]
    write(out_dir, "hepatitis", names + ["died"], rows, numeric_schema(names, "died"))


ILPD_COLUMNS = ["age", "gender", "tot_bilirubin", "direct_bilirubin", "alkphos", "sgpt", "sgot", "tot_proteins",
                "albumin", "ag_ratio"]


def ilpd(out_dir, path):
    # UCI ILPD: 10 features then selector (1 = liver patient, 2 = not).
    rows = []
    with open(path) as f:
        for record in csv.reader(f):
            if not record or not record[0].strip()[0].isdigit():
                continue
            values = [v.strip() for v in record]
            rows.append(values[:10] + [1 if values[10] == "1" else 0])
    features = [{"name": n, "kind": "numeric"} for n in ILPD_COLUMNS]
    features[1] = {"name": "gender", "kind": "categorical", "categories": ["Female", "Male"]}
    write(out_dir, "ilpd", ILPD_COLUMNS + ["liver_patient"], rows,
          {"features": features, "label_column": "liver_patient"})


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="data")
    p.add_argument("--widedeep-wheel", help="pytorch-widedeep wheel to read adult.parquet from")
    p.add_argument("--hepatitis", help="path to UCI hepatitis.data")
    p.add_argument("--ilpd", help="path to the UCI ILPD csv")
    args = p.parse_args()
    breast_cancer(args.out)
    try:
        adult(args.out, args.widedeep_wheel)
    except Exception as e:  # noqa: BLE001
        print(f"adult: skipped ({e})")
    if args.hepatitis:
        hepatitis(args.out, args.hepatitis)
    if args.ilpd:
        ilpd(args.out, args.ilpd)


if __name__ == "__main__":
    main()
