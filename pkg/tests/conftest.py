from pathlib import Path

import numpy as np
import pytest

from nkm.data import Dataset

UCI = Path(__file__).parent / "data" / "uci"


def make_blobs(n=40, d=2, margin=1.0, seed=0):
    """Two Gaussian blobs separated by a gap of ``margin`` along the first axis."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(scale=0.3, size=(n, d))
    X[:, 0] = np.abs(X[:, 0]) + margin / 2
    X[y == 0, 0] *= -1
    return Dataset(X, y, 2)


def write_csv(path, X, y, header=None, label_first=False):
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row, lab in zip(X, y):
            cells = [repr(float(v)) for v in row]
            cells = [str(lab), *cells] if label_first else [*cells, str(lab)]
            fh.write(",".join(cells) + "\n")
    return path


@pytest.fixture
def blobs():
    return make_blobs()


@pytest.fixture
def blob_csv(tmp_path):
    ds = make_blobs(60)
    return write_csv(tmp_path / "blobs.csv", ds.X, np.where(ds.y == 1, "pos", "neg"))


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[tuple[str, str, str]] = []


def record(criterion, ok, detail):
    status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
    ACCEPTANCE.append((criterion, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {criterion}: {detail}")
