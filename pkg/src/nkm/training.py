"""Softmax cross-entropy training of neural-kernel networks.

The objective for a batch ``(X, y)`` is::

    J = gamma * 1/2 * sum ||W_j||_F^2 + mean_i L(x_i, y_i)

where the sum runs over the weight arrays of non-frozen parameters (transform
matrices ``V_k``, conv filters and the scoring matrix ``W``; biases are not
penalized) and ``L`` is the softmax cross-entropy of the class scores.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, stratified_split
from .features import rff_backward
from .network import ArchSpec, BlockSpec, Network, build_network, init_block, init_head, network_forward

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"loss became non-finite at epoch {epoch}")


class SearchFailed(RuntimeError):
    pass


def log_softmax(S: np.ndarray) -> np.ndarray:
    S = np.atleast_2d(S)
    shifted = S - S.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(S: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(S))


def softmax_cross_entropy(scores, label):
    """Negative log-likelihood of ``label`` under ``softmax(scores)``.

    ``scores`` may be ``(Q,)`` with an integer label, or ``(n, Q)`` with an
    integer array, in which case per-sample losses are returned.
    """
    scores = np.asarray(scores, dtype=np.float64)
    single = scores.ndim == 1
    S = np.atleast_2d(scores)
    y = np.atleast_1d(np.asarray(label))
    Q = S.shape[1]
    if y.shape[0] != S.shape[0] or np.any(y < 0) or np.any(y >= Q):
        raise ValueError(f"labels must be in [0, {Q}) and match the number of score rows")
    losses = -log_softmax(S)[np.arange(S.shape[0]), y]
    # rounding can leave -0.0 or a -1e-17 at saturation
    losses = np.maximum(losses, 0.0)
    return float(losses[0]) if single else losses


def _penalized(net: Network):
    for name, p in net.parameters(trainable_only=True).items():
        if not name.endswith(".b") and name != "b":
            yield name, p


def regularizer(net: Network) -> float:
    """``1/2 * sum ||W_j||^2`` over non-frozen weight arrays."""
    return 0.5 * sum(float(np.vdot(p, p)) for _, p in _penalized(net))


def regularizer_grad(net: Network, gamma: float) -> dict[str, np.ndarray]:
    return {name: gamma * p for name, p in _penalized(net)}


def _batch(batch):
    if isinstance(batch, Dataset):
        return batch.X, batch.y
    X, y = batch
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    return X, y


def objective(net: Network, batch, gamma: float) -> float:
    X, y = _batch(batch)
    S, _ = network_forward(net, X)
    return gamma * regularizer(net) + float(softmax_cross_entropy(S, y).mean())


def objective_and_grad(net: Network, batch, gamma: float):
    """Objective value and gradients for every non-frozen parameter.

    Gradients are keyed like :meth:`Network.parameters`.
    """
    X, y = _batch(batch)
    n = X.shape[0]
    S, cache = network_forward(net, X)
    logp = log_softmax(S)
    loss = float(np.maximum(-logp[np.arange(n), y], 0.0).mean())

    grads: dict[str, np.ndarray] = {}
    dS = np.exp(logp)
    dS[np.arange(n), y] -= 1.0
    dS /= n
    grads["W"] = dS.T @ cache.h_last
    grads["b"] = dS.sum(axis=0)

    trainable = [i for i, blk in enumerate(net.blocks) if not blk.freeze]
    lowest = trainable[0] if trainable else len(net.blocks)
    gH = dS @ net.W
    for i in range(len(net.blocks) - 1, lowest - 1, -1):
        blk, bc = net.blocks[i], cache.blocks[i]
        gP = rff_backward(blk.rff, bc.proj, gH)
        if blk.pooling == "maxout":
            gA = np.zeros_like(bc.pre)
            np.put_along_axis(gA, bc.argmax[None], gP[None], axis=0)
        elif blk.pooling == "average":
            gA = np.broadcast_to(gP * (1.0 / blk.m), bc.pre.shape)
        elif blk.pooling == "conv":
            gA = blk.conv_filter[:, None, None] * gP[None]
        else:
            gA = gP[None]
        if not blk.freeze:
            grads[f"blocks.{i}.V"] = gA.transpose(0, 2, 1) @ bc.h_in
            grads[f"blocks.{i}.b"] = gA.sum(axis=1)
            if blk.pooling == "conv":
                grads[f"blocks.{i}.filter"] = np.einsum("kno,no->k", bc.pre, gP)
        if i > lowest:
            gH = (gA @ blk.V).sum(axis=0)

    for name, g in regularizer_grad(net, gamma).items():
        grads[name] = grads[name] + g
    return gamma * regularizer(net) + loss, grads


def backward(net: Network, batch, gamma: float) -> dict[str, np.ndarray]:
    return objective_and_grad(net, batch, gamma)[1]


def evaluate(net: Network, ds: Dataset) -> tuple[float, float]:
    """Mean cross-entropy and accuracy on ``ds``."""
    S, _ = network_forward(net, ds.X)
    loss = float(softmax_cross_entropy(S, ds.y).mean())
    acc = float(np.mean(np.argmax(S, axis=1) == ds.y))
    return loss, acc


@dataclass
class TrainConfig:
    gamma: float = 1e-4
    learning_rate: float = 1.0
    batch_size: int = 32
    max_epochs: int = 300
    patience: int = 20
    min_delta: float = 1e-6
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1, max_epochs >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


class EarlyStopping:
    """Patience counter on a validation loss.

    An epoch counts as an improvement when its loss is below the best so far
    by at least ``min_delta``.
    """

    def __init__(self, patience: int = 20, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, loss: float, epoch: int) -> bool:
        if self.best - loss >= self.min_delta:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    seconds: float = 0.0
    test_loss: float | None = None
    test_accuracy: float | None = None

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1] if self.best_epoch else math.nan

    @property
    def best_val_acc(self) -> float:
        return self.val_acc[self.best_epoch - 1] if self.best_epoch else math.nan

    def records(self):
        for e in range(self.epochs):
            yield e + 1, self.train_loss[e], self.val_loss[e], self.val_acc[e]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for epoch, tl, vl, va in self.records():
            w.writerow([epoch, repr(tl), repr(vl), repr(va)])
        return buf.getvalue()


def sgd_step(net: Network, grads: dict[str, np.ndarray], lr: float) -> None:
    params = net.parameters(trainable_only=True)
    for name, g in grads.items():
        params[name] -= lr * g


def _snapshot(net: Network) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in net.parameters(trainable_only=True).items()}


def _restore(net: Network, snap: dict[str, np.ndarray]) -> None:
    params = net.parameters(trainable_only=True)
    for k, v in snap.items():
        params[k][...] = v


def train(net: Network, train_ds: Dataset, config: TrainConfig, *, val_ds: Dataset | None = None,
          test_ds: Dataset | None = None):
    """Minibatch SGD with early stopping on validation loss.

    A stratified ``config.val_fraction`` of ``train_ds`` is held out for
    validation unless ``val_ds`` is given. The returned network carries the
    parameters of the epoch with the lowest validation loss; the input
    network is left untouched.

    Raises
    ------
    TrainingDiverged
        If a training or validation loss becomes NaN or infinite.
    """
    t0 = time.perf_counter()
    net = net.copy()
    if val_ds is None:
        fit_ds, val_ds = stratified_split(train_ds, config.val_fraction, config.seed)
    else:
        fit_ds = train_ds
    report = TrainReport()
    stopper = EarlyStopping(config.patience, config.min_delta)
    best = _snapshot(net)
    rng = np.random.default_rng([config.seed, 7])
    n = fit_ds.n

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            J, grads = objective_and_grad(net, (fit_ds.X[idx], fit_ds.y[idx]), config.gamma)
            if not math.isfinite(J):
                raise TrainingDiverged(epoch)
            total += J * idx.size
            sgd_step(net, grads, config.learning_rate)
        # running mean of the minibatch objectives seen during the epoch
        train_loss = total / n
        val_loss, val_acc = evaluate(net, val_ds)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingDiverged(epoch)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.val_acc.append(val_acc)
        if stopper.update(val_loss, epoch):
            best = _snapshot(net)
        if stopper.should_stop:
            report.stopped_early = True
            break

    _restore(net, best)
    report.best_epoch = stopper.best_epoch
    if test_ds is not None:
        report.test_loss, report.test_accuracy = evaluate(net, test_ds)
    report.seconds = time.perf_counter() - t0
    log.debug("trained %d epochs, best epoch %d", report.epochs, report.best_epoch)
    return net, report


def stack(base: Network, extension: list[BlockSpec], seed: int, strategy: str = "freeze") -> Network:
    """New network reusing ``base``'s blocks, with ``extension`` blocks and a fresh scoring layer.

    Under ``freeze`` the reused blocks are excluded from training; under
    ``finetune`` they only serve as initialization.
    """
    if strategy not in ("freeze", "finetune"):
        raise ValueError(f"strategy must be 'freeze' or 'finetune', got {strategy!r}")
    blocks = [blk for blk in base.copy().blocks]
    for blk in blocks:
        blk.freeze = strategy == "freeze"
    d_in = blocks[-1].out_dim
    for bs in extension:
        blk = init_block(bs, d_in, seed, len(blocks))
        blocks.append(blk)
        d_in = blk.out_dim
    W, b = init_head(d_in, base.Q, seed, len(blocks))
    return Network(blocks, W, b)


def train_stacked(base: Network, extension: list[BlockSpec], train_ds: Dataset, config: TrainConfig,
                  strategy: str = "freeze", **kwargs):
    net = stack(base, extension, config.seed, strategy)
    return train(net, train_ds, config, **kwargs)


@dataclass
class SearchSpace:
    """Ranges for random architecture search; each block draws its own dims.

    ``d_out`` and ``D`` are inclusive integer ranges drawn uniformly;
    ``sigma`` (first block) and ``sigma_deep`` (later blocks) are drawn
    log-uniformly. Later blocks see unit-norm RFF outputs, so they need a
    smaller bandwidth than the standardized input.
    """

    n_blocks: int = 2
    m: int = 4
    pooling: str = "maxout"
    d_out: tuple[int, int] = (50, 600)
    D: tuple[int, int] = (50, 600)
    sigma: tuple[float, float] = (2.0, 20.0)
    sigma_deep: tuple[float, float] = (1.0, 1.5)

    def __post_init__(self):
        for name in ("d_out", "D", "sigma", "sigma_deep"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} range must satisfy 0 < lo <= hi, got {lo}:{hi}")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")

    def draw(self, rng) -> list[BlockSpec]:
        out = []
        for i in range(self.n_blocks):
            d_out = int(rng.integers(self.d_out[0], self.d_out[1] + 1))
            D = int(rng.integers(self.D[0], self.D[1] + 1))
            lo, hi = np.log(self.sigma if i == 0 else self.sigma_deep)
            sigma = float(np.exp(rng.uniform(lo, hi)))
            out.append(BlockSpec(d_out, D, self.m, self.pooling, sigma))
        return out


@dataclass
class Trial:
    index: int
    blocks: list[BlockSpec]
    val_acc: float = math.nan
    val_loss: float = math.nan
    best_epoch: int = 0
    epochs: int = 0
    seconds: float = 0.0
    status: str = "ok"

    def row(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "blocks"}
        d["blocks"] = ";".join(
            f"{b.pooling}:m={b.m}:d_out={b.d_out}:D={b.D}:sigma={b.sigma!r}" for b in self.blocks
        )
        return d


@dataclass
class SearchResult:
    best: ArchSpec
    report: TrainReport
    network: Network
    trials: list[Trial]
    best_index: int = 0


def random_search(space: SearchSpace, budget: int, train_ds: Dataset, config: TrainConfig,
                  *, val_ds: Dataset | None = None) -> SearchResult:
    """Train ``budget`` randomly drawn architectures and keep the best one.

    Selection is by validation accuracy, then lower validation loss, then the
    earlier draw. Diverged trials are logged and skipped.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng([config.seed, 11])
    trials: list[Trial] = []
    best = None
    for t in range(budget):
        blocks = space.draw(rng)
        trial = Trial(t, blocks)
        arch = ArchSpec(train_ds.d, train_ds.Q, blocks)
        net0 = build_network(arch, config.seed)
        try:
            net, rep = train(net0, train_ds, config, val_ds=val_ds)
        except TrainingDiverged as exc:
            trial.status = f"diverged@{exc.epoch}"
            trials.append(trial)
            log.info("trial %d diverged at epoch %d", t, exc.epoch)
            continue
        trial.val_acc, trial.val_loss = rep.best_val_acc, rep.best_val_loss
        trial.best_epoch, trial.epochs, trial.seconds = rep.best_epoch, rep.epochs, rep.seconds
        trials.append(trial)
        log.info("trial %d: val_acc=%.4f val_loss=%.4f", t, trial.val_acc, trial.val_loss)
        key = (-trial.val_acc, trial.val_loss)
        if best is None or key < best[0]:
            best = (key, arch, rep, net, t)
    if best is None:
        raise SearchFailed(f"all {budget} trials diverged")
    return SearchResult(best[1], best[2], best[3], trials, best[4])
