#!/usr/bin/env python3
"""Download the Statlog German Credit data and convert it for cfkit.

The raw file (space-separated, 20 attributes + outcome per row, 1000 rows) is
fetched from the UCI archive and rewritten as a headered CSV next to the
bundled schema. Class 1 (good credit) maps to outcome 1, class 2 (bad credit)
to outcome 0, so "bad credit" is the unfavorable prediction the explainer
works on.

Usage:
    python3 scripts/fetch_german_credit.py
    python3 scripts/fetch_german_credit.py --from-file german.data  # offline

Requires network access to archive.ics.uci.edu unless --from-file is given.
"""
from __future__ import annotations

import argparse
import csv
import sys
import urllib.request
from pathlib import Path

URL = ("https://archive.ics.uci.edu/ml/machine-learning-databases/"
       "statlog/german/german.data")

COLUMNS = [
    "existingchecking", "duration", "credithistory", "purpose",
    "creditamount", "savings", "employmentsince", "installmentrate",
    "statussex", "otherdebtors", "residencesince", "property", "age",
    "otherinstallmentplans", "housing", "existingcredits", "job",
    "peopleliable", "telephone", "foreignworker",
]

DEFAULT_OUT = (Path(__file__).resolve().parent.parent
               / "src" / "cfkit" / "datasets" / "german" / "german.csv")


def convert(raw_text: str, out_path: Path) -> int:
    rows = []
    for lineno, line in enumerate(raw_text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != len(COLUMNS) + 1:
            raise SystemExit(
                f"line {lineno}: expected {len(COLUMNS) + 1} fields, got {len(parts)}")
        *values, klass = parts
        if klass not in ("1", "2"):
            raise SystemExit(f"line {lineno}: unexpected class label {klass!r}")
        rows.append(values + ["1" if klass == "1" else "0"])
    if len(rows) != 1000:
        raise SystemExit(f"expected 1000 rows, got {len(rows)}")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(COLUMNS + ["outcome"])
        w.writerows(rows)
    return len(rows)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--from-file", type=Path, default=None,
                    help="convert a locally downloaded german.data instead of fetching")
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT,
                    help=f"output CSV path (default: {DEFAULT_OUT})")
    args = ap.parse_args()

    if args.from_file is not None:
        raw = args.from_file.read_text(encoding="utf-8")
    else:
        print(f"fetching {URL} ...", file=sys.stderr)
        with urllib.request.urlopen(URL, timeout=60) as resp:
            raw = resp.read().decode("utf-8")
    n = convert(raw, args.out)
    print(f"wrote {n} rows to {args.out}")


if __name__ == "__main__":
    main()
