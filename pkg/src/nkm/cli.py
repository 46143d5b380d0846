"""Command-line experiment runner.

Subcommands::

    nkm train      --config run.conf [--seed N] [--out DIR] [--repeats N]
    nkm search     --config run.conf [--seed N] [--out DIR]
    nkm baseline   --config run.conf [--seed N] [--out DIR]
    nkm predict    MODEL DATA [--out DIR] [--no-labels]
    nkm dump-reprs MODEL DATA [--out DIR] [--no-labels]

Every config key can also be given as ``--set key=value``. ``NK_THREADS``
caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, apply_pairs, dump_config, load_config
from .data import (DataError, Dataset, load_csv, parse_features, read_rows, resolve_label_column,
                   split, standardize)
from .features import nystrom_apply, nystrom_new, select_prototypes
from .kernels import LSSVMSolverError, lssvm_dual_train, lssvm_primal_train
from .modelfile import ModelBundle, ModelFileError, load_model, save_model
from .network import ArchSpec, build_network, network_forward
from .training import SearchFailed, TrainingDiverged, evaluate, random_search, softmax, train

log = logging.getLogger("nkm")

BASELINE_MAX_N = 20000
TIMING_FIELDS = ("train_seconds", "search_seconds", "seconds")


class CLIError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers

def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    pairs = []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    cfg = apply_pairs(cfg, pairs)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if getattr(args, "repeats", None) is not None:
        cfg = replace(cfg, repeats=args.repeats)
    if cfg.repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if not cfg.data.path:
        raise ConfigError("no dataset given (set data.path)")
    return cfg


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    path = Path(cfg.data.path)
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    return load_csv(path, cfg.data.label_column, cfg.data.header)


def prepared_split(ds: Dataset, cfg: ExperimentConfig, seed: int):
    tr, te = split(ds, cfg.train_fraction, seed)
    return standardize(tr, te)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_matrix(path: Path, M: np.ndarray, header=None) -> None:
    # repr round-trips float64 exactly
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in np.atleast_2d(M):
            w.writerow([repr(float(v)) for v in row])


def _summary_stats(values):
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std()), "values": [float(v) for v in a]}


# ------------------------------------------------------------------ train

def run_train(cfg: ExperimentConfig, ds: Dataset, seed: int, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    run_cfg = replace(cfg, seed=seed, repeats=1, out=str(out))
    tr, te, stats = prepared_split(ds, run_cfg, seed)
    net0 = build_network(ArchSpec(ds.d, ds.Q, run_cfg.blocks), seed)
    net, rep = train(net0, tr, run_cfg.train_config(), test_ds=te)
    bundle = ModelBundle(net, stats, ds.labels, cfg.data.label_column, cfg.data.header, ds.feature_names)
    save_model(out / "model.nkm", bundle)
    (out / "epochs.csv").write_text(rep.to_csv())
    (out / "config.resolved").write_text(dump_config(run_cfg))
    summary = {
        "dataset": cfg.data.path,
        "seed": seed,
        "n_train": tr.n,
        "n_test": te.n,
        "d": ds.d,
        "Q": ds.Q,
        "test_accuracy": rep.test_accuracy,
        "test_loss": rep.test_loss,
        "best_epoch": rep.best_epoch,
        "epochs": rep.epochs,
        "stopped_early": rep.stopped_early,
        "best_val_loss": rep.best_val_loss,
        "best_val_acc": rep.best_val_acc,
        "params_count": net.param_count(),
        "train_seconds": rep.seconds,
    }
    write_json(out / "summary.json", summary)
    log.info("seed %d: test_accuracy=%.4f best_epoch=%d (%.1fs)", seed, rep.test_accuracy,
             rep.best_epoch, rep.seconds)
    return summary


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    ds = load_dataset(cfg)
    out = Path(cfg.out)
    if cfg.repeats == 1:
        s = run_train(cfg, ds, cfg.seed, out)
        print(f"test_accuracy={s['test_accuracy']:.4f} best_epoch={s['best_epoch']} "
              f"params={s['params_count']} -> {out}")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(dump_config(cfg))
    runs = [run_train(cfg, ds, cfg.seed + r, out / f"run_{cfg.seed + r}") for r in range(cfg.repeats)]
    summary = {
        "dataset": cfg.data.path,
        "seeds": [r["seed"] for r in runs],
        "test_accuracy": _summary_stats([r["test_accuracy"] for r in runs]),
        "best_epoch": [r["best_epoch"] for r in runs],
        "params_count": runs[0]["params_count"],
        "train_seconds": float(sum(r["train_seconds"] for r in runs)),
    }
    write_json(out / "summary.json", summary)
    acc = summary["test_accuracy"]
    print(f"test_accuracy={acc['mean']:.4f} +- {acc['std']:.4f} over {cfg.repeats} seeds -> {out}")
    return 0


# ----------------------------------------------------------------- search

def cmd_search(args) -> int:
    cfg = resolve_config(args)
    ds = load_dataset(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tr, te, stats = prepared_split(ds, cfg, cfg.seed)
    res = random_search(cfg.search, cfg.search_budget, tr, cfg.train_config())
    rows = [t.row() for t in res.trials]
    with (out / "trials.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    best_cfg = replace(cfg, blocks=list(res.best.blocks))
    (out / "best.conf").write_text(dump_config(best_cfg))
    test_loss, test_acc = evaluate(res.network, te)
    save_model(out / "model.nkm", ModelBundle(res.network, stats, ds.labels, cfg.data.label_column,
                                              cfg.data.header, ds.feature_names))
    summary = {
        "dataset": cfg.data.path,
        "seed": cfg.seed,
        "budget": cfg.search_budget,
        "best_trial": res.best_index,
        "best_val_acc": res.report.best_val_acc,
        "best_val_loss": res.report.best_val_loss,
        "test_accuracy": test_acc,
        "test_loss": test_loss,
        "search_seconds": float(sum(t.seconds for t in res.trials)),
    }
    write_json(out / "summary.json", summary)
    print(f"best trial {summary['best_trial']}: val_acc={summary['best_val_acc']:.4f} "
          f"test_accuracy={test_acc:.4f} -> {out / 'best.conf'}")
    return 0


# --------------------------------------------------------------- baseline

def cmd_baseline(args) -> int:
    cfg = resolve_config(args)
    ds = load_dataset(cfg)
    if ds.Q != 2:
        raise CLIError(f"baseline LS-SVM handles binary datasets only; {cfg.data.path} has {ds.Q} classes")
    tr, te, _ = prepared_split(ds, cfg, cfg.seed)
    if tr.n > BASELINE_MAX_N:
        raise CLIError(f"dense LS-SVM solve refused for n={tr.n} > {BASELINE_MAX_N}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    bc = cfg.baseline
    y = np.where(tr.y == 1, 1.0, -1.0)

    t0 = time.perf_counter()
    dual = lssvm_dual_train(tr.X, y, bc.gamma, bc.sigma)
    dual_pred = (dual.decision_function(te.X) > 0).astype(int)

    m = bc.prototypes or tr.n
    protos = tr.X if m == tr.n else select_prototypes(tr.X, m, cfg.seed)
    fmap = nystrom_new(protos, bc.sigma, seed=cfg.seed)
    primal = lssvm_primal_train(nystrom_apply(fmap, tr.X), y, bc.gamma, map_ref="nystrom")
    primal_pred = (primal.decision_function(nystrom_apply(fmap, te.X)) > 0).astype(int)
    seconds = time.perf_counter() - t0

    summary = {
        "dataset": cfg.data.path,
        "seed": cfg.seed,
        "n_train": tr.n,
        "n_test": te.n,
        "sigma": bc.sigma,
        "gamma": bc.gamma,
        "prototypes": m,
        "nystrom_rank": fmap.rank,
        "dual_test_accuracy": float(np.mean(dual_pred == te.y)),
        "primal_test_accuracy": float(np.mean(primal_pred == te.y)),
        "agreement": float(np.mean(dual_pred == primal_pred)),
        "seconds": seconds,
    }
    write_json(out / "baseline.json", summary)
    print(f"dual={summary['dual_test_accuracy']:.4f} primal={summary['primal_test_accuracy']:.4f} "
          f"agreement={summary['agreement']:.4f} -> {out}")
    return 0


# ---------------------------------------------------- predict / dump-reprs

def read_inputs(bundle: ModelBundle, path, has_labels: bool):
    """Feature matrix (standardized) and raw label strings from a CSV laid out like the training file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset not found: {path}")
    header, rows = read_rows(path, bundle.has_header)
    ncols = len(rows[0])
    d = bundle.network.d
    labels = None
    if has_labels:
        li = resolve_label_column(bundle.label_column, header, ncols)
        actual = ncols - 1
        if actual != d:
            raise DataError(f"dimension mismatch: model expects d={d} features, {path} has d={actual}")
        labels = [row[li] for row in rows]
        rows = [row[:li] + row[li + 1:] for row in rows]
    elif ncols != d:
        raise DataError(f"dimension mismatch: model expects d={d} features, {path} has d={ncols}")
    X = parse_features(rows, path, 2 if header is not None else 1)
    return bundle.stats.apply(X), labels


def _score_header(bundle):
    return [f"score_{lab}" for lab in bundle.labels]


def cmd_predict(args) -> int:
    bundle = load_model(args.model)
    X, labels = read_inputs(bundle, args.data, not args.no_labels)
    S, _ = network_forward(bundle.network, X)
    P = softmax(S)
    pred = np.argmax(S, axis=1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "predictions.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "label", *(f"p_{lab}" for lab in bundle.labels)])
        for i, (k, p) in enumerate(zip(pred, P)):
            w.writerow([i, bundle.labels[k], *(repr(float(v)) for v in p)])
    write_matrix(out / "scores.csv", S, _score_header(bundle))
    msg = f"{len(pred)} rows -> {out / 'predictions.csv'}"
    if labels is not None:
        acc = float(np.mean([bundle.labels[k] == lab for k, lab in zip(pred, labels)]))
        msg += f" (accuracy {acc:.4f})"
    print(msg)
    return 0


def tap_points(net, X) -> dict[str, np.ndarray]:
    """Hidden representations at every tap point, in forward order."""
    S, cache = network_forward(net, X)
    taps = {}
    for i, bc in enumerate(cache.blocks, 1):
        for k in range(bc.pre.shape[0]):
            taps[f"block_{i}.lin_{k + 1}"] = bc.pre[k]
        taps[f"block_{i}.pooled"] = bc.pooled
        taps[f"block_{i}.phi"] = bc.out
    taps["scores"] = S
    return taps


def cmd_dump_reprs(args) -> int:
    bundle = load_model(args.model)
    X, _ = read_inputs(bundle, args.data, not args.no_labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    taps = tap_points(bundle.network, X)
    for name, M in taps.items():
        write_matrix(out / f"{name}.csv", M, _score_header(bundle) if name == "scores" else None)
    print(f"{len(taps)} tap files -> {out}")
    return 0


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nkm", description="Neural kernel network experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.set_defaults(func=func)
        return sp

    tr = experiment("train", cmd_train, "train a network and write model, curves and summary")
    tr.add_argument("--repeats", type=int, help="train on seeds seed..seed+N-1 and report mean/std")
    experiment("search", cmd_search, "random architecture search")
    experiment("baseline", cmd_baseline, "dual LS-SVM vs primal LS-SVM with a Nystrom map")

    for name, func, help_ in (
        ("predict", cmd_predict, "predict labels and class probabilities"),
        ("dump-reprs", cmd_dump_reprs, "write hidden representations per tap point"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("model")
        sp.add_argument("data")
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        sp.add_argument("--no-labels", action="store_true", help="input file has no label column")
        sp.set_defaults(func=func)
    return p


def _thread_limit():
    raw = os.environ.get("NK_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise CLIError(f"NK_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise CLIError(f"NK_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = _thread_limit()
        if limit is None:
            return args.func(args)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=limit):
            return args.func(args)
    except (CLIError, ConfigError, DataError, ModelFileError, TrainingDiverged, SearchFailed,
            LSSVMSolverError) as exc:
        print(f"nkm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
