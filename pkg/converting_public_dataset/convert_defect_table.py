from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from defect_graph.ingest import METRICS_FILE, MANIFEST_FILE, infer_manifest, write_manifest  # noqa: E402


def convert(table_path, output_dir, file_column="File", label_column="RealBug", drop=(), project=None, version=None):
    # Public per-file tables: one row per file, a bug count or flag, then metric columns
    df = pd.read_csv(table_path)
    for col in (file_column, label_column):
        if col not in df.columns:
            raise SystemExit(f"column '{col}' not in {table_path}")

    df = df.drop(columns=[c for c in drop if c in df.columns])
    metric_cols = [c for c in df.columns if c not in (file_column, label_column)]
    metrics = df[metric_cols].apply(pd.to_numeric, errors="coerce")
    bad = metrics.columns[metrics.isna().any()].tolist()
    if bad:
        print(f"dropping non-numeric column(s): {', '.join(bad)}")
        metrics = metrics.drop(columns=bad)

    labels = pd.to_numeric(df[label_column], errors="coerce").fillna(0)
    out = pd.DataFrame({
        "file": df[file_column].astype(str).str.replace("\\", "/", regex=False),
        "label": (labels > 0).astype(np.int64),
    })
    out = pd.concat([out, metrics.astype(np.float64)], axis=1).drop_duplicates(subset="file")

    os.makedirs(output_dir, exist_ok=True)
    out.to_csv(os.path.join(output_dir, METRICS_FILE), index=False, lineterminator="\n")
    extra = {}
    if project:
        extra["project"] = project
    if version:
        extra["version"] = version
    write_manifest(infer_manifest(metrics.columns), os.path.join(output_dir, MANIFEST_FILE), **extra)

    print("Conversion complete")
    print(f"   Input table:  {table_path}")
    print(f"   Output dir:   {output_dir}")
    print(f"   Files:        {len(out)}")
    print(f"   Metrics:      {metrics.shape[1]}")
    print(f"   Defect rate:  {out['label'].mean():.3f}")
    print("   deps.csv and ownership.csv still have to be extracted from the repository")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Convert a per-file defect table to metrics.csv + manifest.json")
    parser.add_argument("table", help="Input CSV, one row per file")
    parser.add_argument("output", help="Output dataset directory")
    parser.add_argument("--file-column", default="File")
    parser.add_argument("--label-column", default="RealBug", help="bug flag or count; > 0 means defective")
    parser.add_argument("--drop", nargs="*", default=[], help="columns to leave out")
    parser.add_argument("--project")
    parser.add_argument("--version")
    args = parser.parse_args()

    convert(args.table, args.output, args.file_column, args.label_column, args.drop, args.project, args.version)
