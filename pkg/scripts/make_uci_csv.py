"""Write the UCI benchmark CSVs used by the acceptance suite.

Balance and Monk2 are complete enumerations of their attribute grids, so they
are generated from their defining rules:

- balance-scale: all 5^4 (left weight, left distance, right weight, right
  distance) tuples; class L/B/R by comparing torques; class first.
- monks-2 (full test set): all 432 attribute tuples; class 1 iff exactly two
  of the six attributes take their first value; class first.

Sonar and Australian are copied from the KEEL files bundled in the
``keel_ds`` wheel (``pip install keel-ds``). KEEL's own "monk-2" file follows
the MONK-3 rule and is not used.

Usage::

    python scripts/make_uci_csv.py tests/data/uci
"""

import csv
import itertools
import sys
from importlib import resources
from pathlib import Path


def balance_rows():
    for lw, ld, rw, rd in itertools.product(range(1, 6), repeat=4):
        left, right = lw * ld, rw * rd
        cls = "L" if left > right else "R" if right > left else "B"
        yield [cls, lw, ld, rw, rd]


def monk2_rows():
    for attrs in itertools.product((1, 2, 3), (1, 2, 3), (1, 2), (1, 2, 3), (1, 2, 3, 4), (1, 2)):
        yield [int(sum(a == 1 for a in attrs) == 2), *attrs]


def keel_rows(name):
    text = resources.files("keel_ds").joinpath(f"data/balanced/raw/{name}.dat").read_text()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("@"):
            yield [c.strip() for c in line.split(",")]


def write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def main(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write(out / "balance.csv", ["class", "lw", "ld", "rw", "rd"], balance_rows())
    write(out / "monk2.csv", ["class", *(f"a{i}" for i in range(1, 7))], monk2_rows())
    write(out / "sonar.csv", [*(f"band{i}" for i in range(1, 61)), "class"], keel_rows("sonar"))
    write(out / "australian.csv", [*(f"A{i}" for i in range(1, 15)), "class"], keel_rows("australian"))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/uci")
