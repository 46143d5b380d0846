"""Acceptance gate: every criterion at its stated tolerance.

Each test records one PASS/FAIL line; the lines are printed in the
"acceptance criteria" section at the end of the pytest run. The UCI runs use
the ``nkm`` command line exactly as a user would (search, then a 5-seed train
of the selected spec).
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

import nkm.training as training
from nkm.cli import main
from nkm.config import load_config
from nkm.data import Dataset
from nkm.features import nystrom_apply, nystrom_new, rff_apply, rff_new
from nkm.kernels import kernel_matrix, lssvm_dual_train, lssvm_primal_train
from nkm.network import ArchSpec, BlockSpec, build_network, scores
from nkm.training import TrainConfig, train

from conftest import UCI, make_blobs, record
from gradcheck import check, random_problem

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs" / "uci"


# 1 ------------------------------------------------------------------------

def test_c1_rff_kernel_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    X = rng.uniform(-2, 2, size=(50, 2))
    u = rng.normal(size=(50, 2))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    Y = X + rng.uniform(0, 3, size=(50, 1)) * u
    K = np.exp(-np.sum((X - Y) ** 2, axis=1) / 2)

    m = rff_new(2, 2048, 1.0, seed=1)
    est = np.sum(rff_apply(m, X) * rff_apply(m, Y), axis=1)
    worst = np.abs(est - K).max()

    means = np.zeros(50)
    for s in range(200):
        m = rff_new(2, 64, 1.0, seed=1000 + s)
        means += np.sum(rff_apply(m, X) * rff_apply(m, Y), axis=1)
    bias = np.abs(means / 200 - K).max()
    secs = time.perf_counter() - t0
    ok = worst <= 0.08 and bias <= 0.02 and secs < 10
    record("1 RFF kernel fidelity", ok,
           f"max err D=2048 {worst:.4f} (<=0.08); max |mean_200 - K| D=64 {bias:.4f} (<=0.02); {secs:.2f}s (<10s)")
    assert ok


# 2 ------------------------------------------------------------------------

def test_c2_rff_unit_norm():
    rng = np.random.default_rng(2)
    worst = 0.0
    for D in (1, 3, 64, 1000):
        m = rff_new(5, D, 0.7, seed=D)
        X = rng.normal(scale=10.0, size=(1000, 5))
        worst = max(worst, np.abs(np.linalg.norm(rff_apply(m, X), axis=1) - 1).max())
    record("2 RFF unit norm", worst <= 1e-12, f"max | ||phi|| - 1 | = {worst:.2e} (<=1e-12)")
    assert worst <= 1e-12


# 3 ------------------------------------------------------------------------

def test_c3_nystrom_exactness():
    X = np.random.default_rng(3).normal(size=(30, 4))
    fmap = nystrom_new(X, 1.5)
    Phi = nystrom_apply(fmap, X)
    err = np.abs(Phi @ Phi.T - kernel_matrix(X, X, 1.5)).max()
    record("3 Nystrom exactness", err <= 1e-8, f"max |Phi Phi^T - Omega| = {err:.2e} (<=1e-8), rank {fmap.rank}")
    assert err <= 1e-8


# 4 ------------------------------------------------------------------------

def test_c4_primal_dual_equivalence():
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(-1, 0.8, size=(20, 2)), rng.normal(1, 0.8, size=(20, 2))])
    y = np.repeat([-1.0, 1.0], 20)
    sigma, gamma = 1.0, 10.0
    dual = lssvm_dual_train(X, y, gamma, sigma)
    fmap = nystrom_new(X, sigma)
    primal = lssvm_primal_train(nystrom_apply(fmap, X), y, gamma)
    diff = np.abs(primal.decision_function(nystrom_apply(fmap, X)) - dual.decision_function(X)).max()
    record("4 primal-dual equivalence", diff <= 1e-6, f"max |f_primal - f_dual| on training points = {diff:.2e} (<=1e-6)")
    assert diff <= 1e-6


# 5 ------------------------------------------------------------------------

def test_c5_conv_average_identity():
    rng = np.random.default_rng(5)
    worst = 0.0
    for seed in range(5):
        m = int(rng.integers(2, 6))
        blocks = lambda p: [BlockSpec(6, 5, m, p, 1.3), BlockSpec(4, 7, m, p, 0.9)]
        conv = build_network(ArchSpec(3, 3, blocks("conv")), seed)
        avg = build_network(ArchSpec(3, 3, blocks("average")), seed)
        for a, c in zip(avg.blocks, conv.blocks):
            a.b[...] = c.b[...] = rng.normal(size=c.b.shape)
            c.conv_filter[...] = 1.0 / m
        X = rng.normal(size=(100, 3))
        worst = max(worst, np.abs(scores(conv, X) - scores(avg, X)).max())
    record("5 conv/average identity", worst <= 1e-12, f"max score diff over 5 nets x 100 inputs = {worst:.2e} (<=1e-12)")
    assert worst <= 1e-12


# 6 ------------------------------------------------------------------------

def test_c6_gradient_correctness():
    parts, ok = [], True
    for k, pooling in enumerate(("identity", "maxout", "average", "conv")):
        worst = max(check(*random_problem(pooling, 1000 * k + s)) for s in range(10))
        parts.append(f"{pooling} {worst:.1e}")
        ok &= worst <= 1e-5
    record("6 gradient correctness", ok, "max rel err over 10 nets: " + ", ".join(parts) + " (<=1e-5)")
    assert ok


# 7, 8 ---------------------------------------------------------------------

UCI_THRESHOLDS = {"monk2": 0.97, "balance": 0.95, "sonar": 0.70, "australian": 0.82}
_uci_cache: dict[str, dict] = {}


def uci_protocol(name, tmp_root):
    """Search on the seed-0 split, then train the chosen spec on seeds 0..4 (maxout and average)."""
    if name in _uci_cache:
        return _uci_cache[name]
    out = tmp_root / name
    data = ["--set", f"data.path={UCI / (name + '.csv')}"]
    assert main(["search", "--config", str(CONFIGS / f"{name}.conf"), *data, "--seed", "0",
                 "--out", str(out / "search")]) == 0
    best = out / "search" / "best.conf"
    res = {"blocks": load_config(best).blocks}
    for pooling in ("maxout", "average"):
        pool = ["--set", f"blocks.1.pooling={pooling}", "--set", f"blocks.2.pooling={pooling}"]
        assert main(["train", "--config", str(best), *pool, "--seed", "0", "--repeats", "5",
                     "--out", str(out / pooling)]) == 0
        s = json.loads((out / pooling / "summary.json").read_text())
        secs = [json.loads((out / pooling / f"run_{i}" / "summary.json").read_text())["train_seconds"]
                for i in range(5)]
        res[pooling] = (s["test_accuracy"]["mean"], s["test_accuracy"]["std"], max(secs))
    _uci_cache[name] = res
    return res


@pytest.fixture(scope="module")
def uci_root(tmp_path_factory):
    return tmp_path_factory.mktemp("uci")


@pytest.mark.parametrize("name", list(UCI_THRESHOLDS))
def test_c7_uci_reproduction(name, uci_root):
    res = uci_protocol(name, uci_root)
    mean, std, slowest = res["maxout"]
    ok = mean >= UCI_THRESHOLDS[name]
    detail = f"mean test acc {mean:.4f} +- {std:.4f} (>= {UCI_THRESHOLDS[name]})"
    if name == "monk2":
        ok = ok and slowest < 120
        detail += f"; slowest seed {slowest:.1f}s (< 120s)"
    dims = "; ".join(f"d_out={b.d_out} D={b.D} sigma={b.sigma:.2f}" for b in res["blocks"])
    record(f"7 UCI {name}", ok, f"{detail}; spec [{dims}]")
    assert ok


def test_c7_covertype_subsample(tmp_path):
    path = os.environ.get("NKM_COVERTYPE_CSV")
    if not path or not Path(path).is_file():
        record("7 Covertype 20k subsample", "NOT RUN",
               "set NKM_COVERTYPE_CSV to covtype.data (54 features, label last) to run the >= 0.75 gate")
        pytest.skip("Covertype CSV not available")
    raw = np.loadtxt(path, delimiter=",")
    idx = np.sort(np.random.default_rng(0).choice(raw.shape[0], 20000, replace=False))
    sub = tmp_path / "covtype20k.csv"
    np.savetxt(sub, raw[idx], delimiter=",", fmt="%.17g")
    out = tmp_path / "run"
    assert main(["train", "--set", f"data.path={sub}", "--set", "train.batch_size=16",
                 "--set", "train.max_epochs=100", "--out", str(out)]) == 0
    acc = json.loads((out / "summary.json").read_text())["test_accuracy"]
    record("7 Covertype 20k subsample", acc >= 0.75, f"test acc {acc:.4f} (>= 0.75)")
    assert acc >= 0.75


def test_c8_maxout_vs_average_trend(uci_root):
    """Soft check: reported, never fails the run."""
    mx = np.mean([uci_protocol(n, uci_root)["maxout"][0] for n in UCI_THRESHOLDS])
    av = np.mean([uci_protocol(n, uci_root)["average"][0] for n in UCI_THRESHOLDS])
    per = ", ".join(f"{n} {uci_protocol(n, uci_root)['maxout'][0]:.3f}/{uci_protocol(n, uci_root)['average'][0]:.3f}"
                    for n in UCI_THRESHOLDS)
    holds = mx >= av - 0.02
    record("8 ordering trend (soft)", "PASS" if holds else "SOFT-FAIL",
           f"mean maxout {mx:.4f} vs average {av:.4f} (maxout >= average - 0.02); maxout/average: {per}")


# 9 ------------------------------------------------------------------------

def test_c9_early_stopping(monkeypatch):
    patience = 20
    stream = iter([1.0] + [1.0] * 100)
    monkeypatch.setattr(training, "evaluate", lambda net, ds: (next(stream), 0.5))
    net = build_network(ArchSpec(2, 2, [BlockSpec(4, 4, 2, "maxout", 1.0)]), 0)
    _, rep = train(net, make_blobs(), TrainConfig(patience=patience, max_epochs=500))
    ok = rep.epochs == patience + 1 and rep.best_val_loss == min(rep.val_loss) and rep.stopped_early
    record("9 early stopping", ok,
           f"stopped after {rep.epochs} epochs (expected {patience + 1}); best val loss {rep.best_val_loss} "
           f"= curve min {min(rep.val_loss)}")
    assert ok


# 10 -----------------------------------------------------------------------

def test_c10_determinism(tmp_path):
    args = ["train", "--set", f"data.path={UCI / 'monk2.csv'}", "--set", "data.label_column=0",
            "--set", "data.header=true", "--seed", "0"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    sa, sb = (json.loads((tmp_path / r / "summary.json").read_text()) for r in "ab")
    for s in (sa, sb):
        s.pop("train_seconds")
    same_summary = sa == sb
    same_model = (tmp_path / "a" / "model.nkm").read_bytes() == (tmp_path / "b" / "model.nkm").read_bytes()
    ok = same_summary and same_model
    record("10 determinism", ok, f"summary identical: {same_summary}; model bytes identical: {same_model}")
    assert ok
