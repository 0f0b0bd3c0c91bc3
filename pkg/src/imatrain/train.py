"""Training loops: increasing-margin adversarial training plus baselines.

The increasing-margin trainer alternates two passes per epoch:

  1. model update -- every mini-batch is split by current correctness into
     wrong {X0, Y0} and correct {X1, Y1}; boundary points X_n are generated
     for X1 with per-sample noise budgets from the margin table; the update
     minimizes  L = ((1 - beta) * (L0 + L1) + beta * L2) / batch_size  where
     L0, L1 are clean cross-entropy sums and L2 is the cross-entropy sum of
     the boundary points labeled Y1;
  2. margin update -- for every correctly-classified training sample, a
     boundary search with its current budget either shrinks the margin to
     the midpoint of (distance-to-boundary, margin) or, when no boundary is
     hit, expands it by delta_eps; all margins are then clipped to
     [0, eps_max].

Baselines: plain cross-entropy training and fixed-budget adversarial
training that averages the clean and attacked batch losses.

Loss bookkeeping uses the nominal configured batch size as the divisor even
for a short final batch, so runs with different batch counts stay
comparable.  RNG streams for shuffling, attacks, and margin updates are
mutually isolated (see ``rngs``).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import net
from .attacks import AttackConfig, attack_batch, bpgd_batch
from .data import Dataset
from .net import Adam, AdamConfig, Model, grad_params, save_checkpoint
from .rngs import substream


@dataclass
class MarginTable:
    """Per-training-sample noise budgets, kept inside [0, eps_max]."""

    margins: np.ndarray
    delta_eps: float
    eps_max: float

    def __post_init__(self):
        self.margins = np.asarray(self.margins, dtype=np.float64)
        if self.delta_eps <= 0 or self.eps_max <= 0:
            raise ValueError("delta_eps and eps_max must be positive")

    @classmethod
    def fresh(cls, n_samples, delta_eps, eps_max):
        """Every entry starts at delta_eps."""
        return cls(np.full(n_samples, float(delta_eps)), delta_eps, eps_max)

    def stats(self):
        m = self.margins
        return float(m.mean()), float(m.min()), float(m.max())


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    beta: float = 0.5
    eps_max: float = 0.3
    delta_eps: float | None = None   # defaults to eps_max / epochs
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(n_pgd=20))
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    bpgd_enabled: bool = True        # allow disabling for baseline-equivalence runs

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.eps_max <= 0:
            raise ValueError("eps_max must be positive")
        if self.delta_eps is None:
            self.delta_eps = self.eps_max / self.epochs
        if self.delta_eps <= 0:
            raise ValueError("delta_eps must be positive")


@dataclass
class EpochLog:
    epoch: int
    margin_mean: float = float("nan")
    margin_min: float = float("nan")
    margin_max: float = float("nan")
    train_acc: float = float("nan")
    val_acc: float = float("nan")
    loss_wrong: float = 0.0      # L0 summed over the epoch
    loss_correct: float = 0.0    # L1 summed over the epoch
    loss_boundary: float = 0.0   # L2 summed over the epoch
    loss_total: float = 0.0      # sum of per-batch composite losses L
    n_correct: int = 0
    n_found: int = 0
    n_absent: int = 0
    # per-batch tuples (L0, L1, L2, L, nominal_batch_size), for diagnostics
    batch_components: list = field(default_factory=list)

    CSV_FIELDS = ("epoch", "margin_mean", "margin_min", "margin_max",
                  "train_acc", "val_acc", "loss_wrong", "loss_correct",
                  "loss_boundary", "loss_total", "n_correct", "n_found",
                  "n_absent")


@dataclass
class TrainResult:
    model: Model
    table: MarginTable | None
    logs: list
    checkpoints: list   # per-epoch parameter snapshots (copies)


def _batches(n, batch_size, order):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _val_accuracy(model, dataset):
    Xv, Yv = dataset.subset("val")
    if len(Yv) == 0:
        return float("nan")
    return float((model.predict(Xv) == Yv).mean())


def _sum_ce(model, X, Y):
    if len(Y) == 0:
        return 0.0
    return float(net.loss(model, X, Y, "cross_entropy").sum())


def _emit_epoch_files(out_dir, epoch, model, table, logs):
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(model, os.path.join(out_dir, f"model_epoch{epoch:03d}.ckpt"))
    if table is not None:
        with open(os.path.join(out_dir, f"margins_epoch{epoch:03d}.csv"), "w",
                  newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "margin"])
            for i, m in enumerate(table.margins):
                w.writerow([i, f"{m:.17g}"])
    with open(os.path.join(out_dir, "trainlog.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EpochLog.CSV_FIELDS)
        for log in logs:
            w.writerow([getattr(log, f) for f in EpochLog.CSV_FIELDS])


# ---------------------------------------------------------------------------
# increasing-margin training


def ima_epoch(model, X, Y, table: MarginTable, cfg: TrainConfig, epoch: int,
              opt: Adam) -> EpochLog:
    """One model-update epoch; mutates model params via ``opt``."""
    n = X.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    log = EpochLog(epoch=epoch)
    order = substream(cfg.seed, "shuffle", epoch).permutation(n)
    B = cfg.batch_size
    beta = cfg.beta
    for b, idx in enumerate(_batches(n, B, order)):
        Xb, Yb = X[idx], Y[idx]
        correct = model.predict(Xb) == Yb
        X0, Y0 = Xb[~correct], Yb[~correct]
        X1, Y1 = Xb[correct], Yb[correct]
        log.n_correct += int(correct.sum())

        l0 = _sum_ce(model, X0, Y0)
        l1 = _sum_ce(model, X1, Y1)
        l2 = 0.0
        grad = np.zeros(model.n_params)
        if len(Y0):
            grad += grad_params(model, X0, Y0,
                                weights=np.full(len(Y0), (1.0 - beta) / B))
        if len(Y1):
            grad += grad_params(model, X1, Y1,
                                weights=np.full(len(Y1), (1.0 - beta) / B))
        if cfg.bpgd_enabled and len(Y1):
            res = bpgd_batch(model, X1, Y1, table.margins[idx[correct]],
                             cfg.attack,
                             rng=substream(cfg.seed, "bpgd", epoch, b))
            log.n_found += int(res.found.sum())
            log.n_absent += int((~res.found).sum())
            if np.any(res.found):
                Xn = res.points[res.found]
                Yn = Y1[res.found]
                l2 = _sum_ce(model, Xn, Yn)
                if beta > 0.0:
                    grad += grad_params(model, Xn, Yn,
                                        weights=np.full(len(Yn), beta / B))
        composite = ((1.0 - beta) * (l0 + l1) + beta * l2) / B
        log.loss_wrong += l0
        log.loss_correct += l1
        log.loss_boundary += l2
        log.loss_total += composite
        log.batch_components.append((l0, l1, l2, composite, B))
        opt.step(model, grad)
    log.train_acc = log.n_correct / n
    return log


def ima_margin_update(model, X, Y, table: MarginTable, cfg: TrainConfig,
                      epoch: int) -> MarginTable:
    """Expand/shrink pass over the whole training set on the current model.

    Runs in mini-batches but writes the table only after the full pass, so
    within-epoch order cannot bias the result.  Wrongly-classified samples
    keep their margin for this epoch (the boundary search is only defined
    for correctly-classified inputs); the final clip applies to every entry.
    The chunk size is independent of the training batch size because the
    model is frozen during this pass.
    """
    new = table.margins.copy()
    norm = cfg.attack.norm
    chunk = max(cfg.batch_size, 4096)
    for b, idx in enumerate(_batches(len(Y), chunk, np.arange(len(Y)))):
        Xb, Yb = X[idx], Y[idx]
        correct = model.predict(Xb) == Yb
        if not np.any(correct):
            continue
        ids = idx[correct]
        res = bpgd_batch(model, Xb[correct], Yb[correct], table.margins[ids],
                         cfg.attack,
                         rng=substream(cfg.seed, "margin", epoch, b))
        diff = res.points - Xb[correct]
        if norm == "linf":
            dist = np.abs(diff).max(axis=1)
        else:
            dist = np.sqrt((diff * diff).sum(axis=1))
        shrunk = (dist + table.margins[ids]) / 2.0
        new[ids] = np.where(res.found, shrunk, table.margins[ids] + cfg.delta_eps)
    np.clip(new, 0.0, table.eps_max, out=new)
    return MarginTable(new, table.delta_eps, table.eps_max)


def ima_train(model, dataset: Dataset, cfg: TrainConfig,
              out_dir=None) -> TrainResult:
    """Alternate model updates and margin updates for ``cfg.epochs`` epochs."""
    X, Y = dataset.subset("train")
    if len(Y) == 0:
        raise ValueError("dataset has no training split")
    table = MarginTable.fresh(len(Y), cfg.delta_eps, cfg.eps_max)
    opt = Adam(model.n_params, cfg.optimizer)
    logs, checkpoints = [], []
    for epoch in range(1, cfg.epochs + 1):
        log = ima_epoch(model, X, Y, table, cfg, epoch, opt)
        table = ima_margin_update(model, X, Y, table, cfg, epoch)
        log.margin_mean, log.margin_min, log.margin_max = table.stats()
        log.val_acc = _val_accuracy(model, dataset)
        logs.append(log)
        checkpoints.append(model.params.copy())
        if out_dir is not None:
            _emit_epoch_files(out_dir, epoch, model, table, logs)
    return TrainResult(model=model, table=table, logs=logs,
                       checkpoints=checkpoints)


# ---------------------------------------------------------------------------
# baselines


def ce_train(model, dataset: Dataset, cfg: TrainConfig,
             out_dir=None) -> TrainResult:
    """Plain mini-batch cross-entropy training on clean data."""
    X, Y = dataset.subset("train")
    if len(Y) == 0:
        raise ValueError("dataset has no training split")
    opt = Adam(model.n_params, cfg.optimizer)
    B = cfg.batch_size
    logs, checkpoints = [], []
    for epoch in range(1, cfg.epochs + 1):
        log = EpochLog(epoch=epoch)
        order = substream(cfg.seed, "shuffle", epoch).permutation(len(Y))
        for idx in _batches(len(Y), B, order):
            Xb, Yb = X[idx], Y[idx]
            log.n_correct += int((model.predict(Xb) == Yb).sum())
            log.loss_total += _sum_ce(model, Xb, Yb) / B
            grad = grad_params(model, Xb, Yb, weights=np.full(len(Yb), 1.0 / B))
            opt.step(model, grad)
        log.train_acc = log.n_correct / len(Y)
        log.val_acc = _val_accuracy(model, dataset)
        logs.append(log)
        checkpoints.append(model.params.copy())
        if out_dir is not None:
            _emit_epoch_files(out_dir, epoch, model, None, logs)
    return TrainResult(model=model, table=None, logs=logs,
                       checkpoints=checkpoints)


def vanilla_adv_train(model, dataset: Dataset, eps: float, cfg: TrainConfig,
                      out_dir=None) -> TrainResult:
    """Fixed-budget adversarial training: average of clean and attacked loss.

    Every batch sample is attacked at the same budget ``eps`` with the
    training-time attack (20 iterations, alpha=4 by default); the update
    minimizes (L_ce(clean) + L_ce(attacked)) / 2 batch-averaged.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    X, Y = dataset.subset("train")
    if len(Y) == 0:
        raise ValueError("dataset has no training split")
    atk = cfg.attack.with_epsilon(eps)
    opt = Adam(model.n_params, cfg.optimizer)
    B = cfg.batch_size
    logs, checkpoints = [], []
    for epoch in range(1, cfg.epochs + 1):
        log = EpochLog(epoch=epoch)
        order = substream(cfg.seed, "shuffle", epoch).permutation(len(Y))
        for b, idx in enumerate(_batches(len(Y), B, order)):
            Xb, Yb = X[idx], Y[idx]
            log.n_correct += int((model.predict(Xb) == Yb).sum())
            Xa = attack_batch(model, Xb, Yb, atk,
                              rng=substream(cfg.seed, "adv", epoch, b))
            log.loss_total += 0.5 * (_sum_ce(model, Xb, Yb)
                                     + _sum_ce(model, Xa, Yb)) / B
            w = np.full(len(Yb), 1.0 / B)
            grad = 0.5 * grad_params(model, Xb, Yb, weights=w) \
                 + 0.5 * grad_params(model, Xa, Yb, weights=w)
            opt.step(model, grad)
        log.train_acc = log.n_correct / len(Y)
        log.val_acc = _val_accuracy(model, dataset)
        logs.append(log)
        checkpoints.append(model.params.copy())
        if out_dir is not None:
            _emit_epoch_files(out_dir, epoch, model, None, logs)
    return TrainResult(model=model, table=None, logs=logs,
                       checkpoints=checkpoints)
