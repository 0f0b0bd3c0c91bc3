"""Robustness measurement and diagnostics.

The headline protocol attacks every test sample twice per noise level, once
per attack loss (cross-entropy and logit margin), with 100-iteration PGD; a
sample counts as robust-correct at a level only if it survives both attacked
copies at that level and every lower one.  Carrying failures forward makes
the reported worst-case accuracy monotone in the noise level by
construction: any adversarial point found inside a smaller ball is also a
valid attack at every larger ball.

Accuracies are stored as integer counts so reported ratios are exact.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .attacks import AttackConfig, _ball_sample, attack_batch
from .net import LOSS_KINDS, softmax_probs
from .rngs import substream

ATTACK_COLUMNS = ("cross_entropy", "logit_margin", "worst_case")


@dataclass
class RobustnessReport:
    noise_levels: list
    n_total: int
    n_correct: np.ndarray          # (n_levels, 3) ints, columns ATTACK_COLUMNS
    attack: AttackConfig
    checkpoint_id: str = ""

    def accuracy(self, level_index, column):
        col = ATTACK_COLUMNS.index(column)
        return self.n_correct[level_index, col] / self.n_total

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("level,attack,n_correct,n_total,accuracy\n")
            for i, level in enumerate(self.noise_levels):
                for j, kind in enumerate(ATTACK_COLUMNS):
                    c = int(self.n_correct[i, j])
                    fh.write(f"{level:.17g},{kind},{c},{self.n_total},"
                             f"{c / self.n_total:.17g}\n")


def evaluate_robustness(model, X, Y, noise_levels, cfg: AttackConfig,
                        checkpoint_id="") -> RobustnessReport:
    """Dual-loss PGD evaluation over ascending noise levels.

    Level 0 (implicit or explicit) is clean classification.  Fresh random
    inits are drawn per (level, loss) from the config seed.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    levels = sorted(float(v) for v in noise_levels)
    if any(v < 0 for v in levels):
        raise ValueError("noise levels must be >= 0")
    n = X.shape[0]
    clean_ok = model.predict(X) == Y
    surviving = {kind: clean_ok.copy() for kind in LOSS_KINDS}
    counts = np.zeros((len(levels), 3), dtype=np.int64)
    for i, level in enumerate(levels):
        if level > 0:
            atk = cfg.with_epsilon(level)
            for kind in LOSS_KINDS:
                rng = substream(cfg.seed, "eval", i, kind)
                X_adv = attack_batch(model, X, Y, atk, loss_kind=kind, rng=rng)
                surviving[kind] &= model.predict(X_adv) == Y
        counts[i, 0] = surviving["cross_entropy"].sum()
        counts[i, 1] = surviving["logit_margin"].sum()
        counts[i, 2] = (surviving["cross_entropy"]
                        & surviving["logit_margin"]).sum()
    return RobustnessReport(noise_levels=levels, n_total=n, n_correct=counts,
                            attack=cfg, checkpoint_id=checkpoint_id)


def evaluate_white_noise(model, X, Y, level, n_trials, seed, norm="l2"):
    """Fraction of uniform-ball noisy copies that flip a clean-correct sample."""
    if level < 0:
        raise ValueError("level must be >= 0")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    ok = model.predict(X) == Y
    Xc, Yc = X[ok], Y[ok]
    if len(Yc) == 0:
        raise ValueError("no correctly-classified samples to perturb")
    eps = np.full(len(Yc), float(level))
    flips = 0
    for trial in range(n_trials):
        rng = substream(seed, "white", trial)
        noise = _ball_sample(rng, len(Yc), X.shape[1], eps, norm)
        flips += int((model.predict(Xc + noise) != Yc).sum())
    return flips / (len(Yc) * n_trials)


# ---------------------------------------------------------------------------
# margin histogram


@dataclass
class MarginHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    mean: float
    median: float
    frac_at_cap: float   # fraction of entries within one delta_eps of eps_max

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("bin_lo,bin_hi,count\n")
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:],
                                 self.counts):
                fh.write(f"{lo:.17g},{hi:.17g},{int(c)}\n")


def margin_histogram(table, n_bins) -> MarginHistogram:
    """Equal-width histogram of the margin table over [0, eps_max]."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    m = table.margins
    if m.size == 0:
        raise ValueError("margin table is empty")
    counts, edges = np.histogram(m, bins=n_bins, range=(0.0, table.eps_max))
    return MarginHistogram(
        bin_edges=edges, counts=counts, mean=float(m.mean()),
        median=float(np.median(m)),
        frac_at_cap=float((m >= table.eps_max - table.delta_eps).mean()))


# ---------------------------------------------------------------------------
# decision-boundary raster


def rasterize_boundary(model, bounds, resolution):
    """Argmax-class grid over a 2-D lattice; grid[i, j] is class at (x_j, y_i)."""
    if model.in_dim != 2:
        raise ValueError("rasterize_boundary requires a 2-D input model")
    if isinstance(resolution, int):
        rx = ry = resolution
    else:
        rx, ry = resolution
    if rx < 2 or ry < 2:
        raise ValueError("resolution must be >= 2 per axis")
    (x_lo, x_hi), (y_lo, y_hi) = bounds
    xs = np.linspace(x_lo, x_hi, rx)
    ys = np.linspace(y_lo, y_hi, ry)
    XX, YY = np.meshgrid(xs, ys)
    pts = np.column_stack([XX.ravel(), YY.ravel()])
    return model.predict(pts).reshape(ry, rx)


def boundary_mask(grid):
    """Cells with a 4-neighbor of a different class."""
    g = np.asarray(grid)
    mask = np.zeros(g.shape, dtype=bool)
    mask[:-1, :] |= g[:-1, :] != g[1:, :]
    mask[1:, :] |= g[1:, :] != g[:-1, :]
    mask[:, :-1] |= g[:, :-1] != g[:, 1:]
    mask[:, 1:] |= g[:, 1:] != g[:, :-1]
    return mask


def write_pgm(grid, path, maxval=None):
    """Plain (P2) PGM with one gray level per class id."""
    g = np.asarray(grid)
    if maxval is None:
        maxval = max(1, int(g.max()))
    with open(path, "w") as fh:
        fh.write(f"P2\n{g.shape[1]} {g.shape[0]}\n{maxval}\n")
        for row in g:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def write_bounds_meta(bounds, resolution, path):
    with open(path, "w") as fh:
        json.dump({"bounds": [list(b) for b in bounds],
                   "resolution": resolution}, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# equilibrium diagnostic


@dataclass
class EquilibriumStats:
    """Boundary-point diagnostics; minimized boundary loss has equal top-two
    softmax outputs, so small gaps indicate near-boundary placement and
    per-class loss asymmetry indicates distance from equilibrium."""

    class_loss_terms: dict          # class id -> mean -log P_class; absent classes omitted
    gaps: np.ndarray                # |P_top1 - P_top2| per point

    @property
    def median_gap(self):
        return float(np.median(self.gaps))

    @property
    def max_gap(self):
        return float(self.gaps.max())

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("stat,value\n")
            for c in sorted(self.class_loss_terms):
                fh.write(f"class{c}_loss_term,{self.class_loss_terms[c]:.17g}\n")
            fh.write(f"gap_mean,{self.gaps.mean():.17g}\n")
            fh.write(f"gap_median,{self.median_gap:.17g}\n")
            fh.write(f"gap_max,{self.max_gap:.17g}\n")


def equilibrium_diagnostic(model, points, labels) -> EquilibriumStats:
    """Per-source-class boundary loss terms and top-two probability gaps."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("equilibrium_diagnostic needs a nonempty point batch")
    if labels.shape != (points.shape[0],):
        raise ValueError("one source label per point required")
    P = softmax_probs(model.forward(points))
    top2 = np.sort(P, axis=1)[:, -2:]
    gaps = top2[:, 1] - top2[:, 0]
    terms = {}
    for c in np.unique(labels):
        pc = P[labels == c, c]
        terms[int(c)] = float(np.mean(-np.log(np.maximum(pc, 1e-300))))
    return EquilibriumStats(class_loss_terms=terms, gaps=gaps)


# ---------------------------------------------------------------------------
# Dice metrics on mask counts


@dataclass
class MaskCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self):
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise ValueError("mask counts must be nonnegative")


def dice_metrics(counts):
    """(pooled-voxel Dice, mean per-sample Dice) over a list of MaskCounts.

    A sample with TP = FP = FN = 0 (empty prediction of empty truth) scores
    a per-sample Dice of 1.0; the same convention applies to the pooled
    value when every sample is empty.
    """
    if not counts:
        raise ValueError("dice_metrics needs at least one sample")
    tp = np.array([c.tp for c in counts], dtype=np.float64)
    fp = np.array([c.fp for c in counts], dtype=np.float64)
    fn = np.array([c.fn for c in counts], dtype=np.float64)
    denom = 2.0 * tp + fp + fn
    per_sample = np.ones_like(denom)
    nz = denom > 0
    per_sample[nz] = 2.0 * tp[nz] / denom[nz]
    if np.any(~nz):
        warnings.warn("empty-prediction-of-empty-truth sample scored as 1.0")
    pooled_denom = 2.0 * tp.sum() + fp.sum() + fn.sum()
    tvdi = 1.0 if pooled_denom == 0 else 2.0 * tp.sum() / pooled_denom
    return float(tvdi), float(per_sample.mean())
