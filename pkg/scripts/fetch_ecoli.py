#!/usr/bin/env python3
"""Fetch the UCI Ecoli dataset and convert it to data/ecoli.csv.

The acceptance suite's soft real-data bound reads data/ecoli.csv with a
header row and a 'class' label column. Run this script on a machine with
network access:

    python3 scripts/fetch_ecoli.py

Source: https://archive.ics.uci.edu/ml/machine-learning-databases/ecoli/ecoli.data
(336 rows; columns: sequence name, 7 numeric features, class label).
"""

import csv
import os
import sys
import urllib.request

URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/ecoli/ecoli.data"
FEATURES = ["mcg", "gvh", "lip", "chg", "aac", "alm1", "alm2"]


def main() -> int:
    out_dir = os.path.join(os.path.dirname(__file__), os.pardir, "data")
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.abspath(os.path.join(out_dir, "ecoli.csv"))

    print(f"fetching {URL}")
    with urllib.request.urlopen(URL, timeout=60) as response:
        raw = response.read().decode()

    rows = []
    for line in raw.splitlines():
        parts = line.split()
        if len(parts) != 9:
            continue
        # drop the sequence-name column; keep 7 features + class
        rows.append(parts[1:])
    if len(rows) != 336:
        print(f"warning: expected 336 rows, parsed {len(rows)}", file=sys.stderr)

    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURES + ["class"])
        writer.writerows(rows)
    print(f"wrote {out_path} ({len(rows)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
