"""Print deviations between generated sweep tables and the frozen reference tables.

Usage: python scripts/compare_reference.py [RESULTS_DIR]
"""

import csv
import json
import sys
from pathlib import Path

REFERENCE = Path(__file__).resolve().parents[1] / "tests" / "data" / "reference_tables.json"


def wide_row(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if not r[0].startswith("#")]
    header, row = rows[0], rows[1]
    return [100 * float(v) for k, v in zip(header, row) if k.startswith("BP=")]


def main(results="results"):
    ref = json.loads(REFERENCE.read_text())
    tables = {"ppcs": ("max_type1_calibrated_ppcs", 0.02), "wald": ("max_type1_asymptotic_wald", 0.3)}
    for sub, (key, tol) in tables.items():
        for n, expected in ref[key].items():
            path = Path(results) / sub / f"sweep-n{n}-max-rejection.csv"
            if not path.exists():
                print(f"{sub} n={n}: missing {path}")
                continue
            got = wide_row(path)
            devs = [g - e for g, e in zip(got, expected)]
            worst = max(devs, key=abs)
            flag = "ok" if abs(worst) <= tol + 1e-9 else "OUTSIDE"
            print(f"{sub} n={n}: worst deviation {worst:+.3f} pp ({flag}, tolerance {tol})")
            for k, (g, e) in enumerate(zip(got, expected)):
                if abs(g - e) > tol + 1e-9:
                    print(f"    BP={k / 10:.1f}: {g:.3f} vs {e:.2f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
