"""White-box and black-box attacks on ``net.Model`` classifiers.

Three operations:

  * ``pgd_attack`` -- iterative loss ascent with epsilon-ball projection,
    ``x_i = clip(x_{i-1} + eta * h(dJ/dx))`` with ``eta = alpha * eps / n_pgd``;
    ``h`` is the sign map for the L-inf norm and L2-normalization for L2.
  * ``bpgd`` -- runs the same iteration, scans the iterate sequence for the
    first correct->wrong transition, and bisects that segment to land a point
    on the decision boundary.  Returns None when the whole sequence stays
    correctly classified (case 0).
  * ``spsa_attack`` -- the same outer loop but with the gradient replaced by
    a simultaneous-perturbation estimate from paired forward evaluations, so
    it never touches ``grad_input``.

All operations are pure functions of (model, inputs, config, stream); batch
variants vectorize over samples and accept per-sample noise budgets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import net
from .rngs import substream

NORM_KINDS = ("l2", "linf")

# Relative shell tolerance: vectors within (1 + _BALL_SLACK) * eps count as
# inside, which makes the L2 projection exactly idempotent under rounding.
_BALL_SLACK = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyperparameters; the step size is always derived, never stored."""

    norm: str = "l2"
    epsilon: float = 0.3
    n_pgd: int = 20
    alpha: float = 4.0
    n_binary: int = 10
    seed: int = 0
    clip_box: tuple[float, float] | None = None

    def __post_init__(self):
        if self.norm not in NORM_KINDS:
            raise ValueError(f"norm must be one of {NORM_KINDS}, got {self.norm!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.n_pgd < 1:
            raise ValueError("n_pgd must be >= 1")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.n_binary < 1:
            raise ValueError("n_binary must be >= 1")
        if self.clip_box is not None and self.clip_box[0] >= self.clip_box[1]:
            raise ValueError("clip_box lower bound must be below upper bound")

    @property
    def step_size(self) -> float:
        return self.alpha * self.epsilon / self.n_pgd

    def with_epsilon(self, epsilon: float) -> "AttackConfig":
        return replace(self, epsilon=epsilon)


@dataclass
class Trajectory:
    """PGD iterates x_(1)..x_(N) with their classified-as-y flags."""

    points: np.ndarray        # (n_pgd, d)
    correct_flags: np.ndarray  # (n_pgd,) bool

    def __post_init__(self):
        if len(self.points) != len(self.correct_flags):
            raise ValueError("points and correct_flags must have equal length")


@dataclass
class BoundaryBatch:
    """BPGD results for a batch: wrong-side points and correct-side partners."""

    found: np.ndarray     # (n,) bool; False means case 0 (no boundary point)
    points: np.ndarray    # (n, d); rows where found is False are the inputs
    partners: np.ndarray  # (n, d); correct-side endpoint of the final bracket


# ---------------------------------------------------------------------------
# geometry helpers


def project_ball(delta, epsilon, norm="l2"):
    """Project one vector or a batch of row vectors into the epsilon-ball.

    Vectors already inside are returned unchanged; L2 projection is radial
    scaling, L-inf is per-coordinate clamping.  Idempotent bit-exactly.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    D = np.asarray(delta, dtype=np.float64)
    single = D.ndim == 1
    rows = D[None, :] if single else D
    out = _project_rows(rows.copy(), np.full(rows.shape[0], float(epsilon)), norm)
    return out[0] if single else out


def _project_rows(D, eps, norm):
    """In-place per-row projection with per-row budgets; returns D."""
    if norm == "linf":
        np.clip(D, -eps[:, None], eps[:, None], out=D)
        return D
    norms = np.sqrt((D * D).sum(axis=1))
    over = norms > eps * (1.0 + _BALL_SLACK)
    if np.any(over):
        scale = np.ones_like(norms)
        scale[over] = eps[over] / norms[over]
        D *= scale[:, None]
    return D


def _ball_sample(rng, n, d, eps, norm):
    """Uniform draws from per-row epsilon-balls; (n, d) array."""
    if norm == "linf":
        return rng.uniform(-1.0, 1.0, size=(n, d)) * eps[:, None]
    G = rng.standard_normal((n, d))
    norms = np.sqrt((G * G).sum(axis=1))
    norms[norms == 0] = 1.0
    radius = eps * rng.uniform(0.0, 1.0, size=n) ** (1.0 / d)
    return G * (radius / norms)[:, None]


def _apply_box(X, clip_box):
    if clip_box is not None:
        np.clip(X, clip_box[0], clip_box[1], out=X)
    return X


def _directions(G, norm):
    """h(J'): sign for L-inf, row L2-normalization for L2; 0 rows stall."""
    if norm == "linf":
        return np.sign(G)
    norms = np.sqrt((G * G).sum(axis=1))
    out = np.zeros_like(G)
    nz = norms > 0
    out[nz] = G[nz] / norms[nz, None]
    return out


def pgd_init(x, cfg: AttackConfig, rng=None):
    """x plus noise drawn uniformly from the epsilon-ball, then box-clipped."""
    x = np.asarray(x, dtype=np.float64)
    if rng is None:
        rng = substream(cfg.seed, "init")
    xi = _ball_sample(rng, 1, x.shape[0], np.array([cfg.epsilon]), cfg.norm)[0]
    return _apply_box(x + xi, cfg.clip_box)


# ---------------------------------------------------------------------------
# PGD


def _check_attack_inputs(model, x, y):
    X, single = net._as_batch(x, model.in_dim)
    Y = net._as_labels(y, X.shape[0], model.num_classes)
    return X, Y, single


def _pgd_step(model, cur, X, Y, eps, eta, cfg, loss_kind):
    """One iterate: gradient at ``cur``, ascent step, ball and box clip.

    Returns (logits at cur, next iterate); rows are independent.
    """
    logits, G = net._logits_and_grad_input(model, cur, Y, loss_kind)
    step = _directions(G, cfg.norm) * eta[:, None]
    delta = _project_rows(cur + step - X, eps, cfg.norm)
    nxt = _apply_box(X + delta, cfg.clip_box)
    return logits, nxt


def pgd_attack(model, x, y, cfg: AttackConfig, loss_kind="cross_entropy",
               rng=None):
    """Attack one sample; returns (x_adv, Trajectory)."""
    net._check_loss_kind(loss_kind)
    X, Y, single = _check_attack_inputs(model, x, y)
    if not single:
        raise ValueError("pgd_attack takes one sample; use attack_batch")
    if rng is None:
        rng = substream(cfg.seed, "init")
    eps = np.array([cfg.epsilon])
    eta = cfg.alpha * eps / cfg.n_pgd
    cur = X + _ball_sample(rng, 1, X.shape[1], eps, cfg.norm)
    _apply_box(cur, cfg.clip_box)
    points = np.empty((cfg.n_pgd, X.shape[1]))
    flags = np.empty(cfg.n_pgd, dtype=bool)
    for i in range(cfg.n_pgd):
        _, cur = _pgd_step(model, cur, X, Y, eps, eta, cfg, loss_kind)
        points[i] = cur[0]
        flags[i] = model.predict(cur)[0] == Y[0]
    return cur[0], Trajectory(points=points, correct_flags=flags)


def attack_batch(model, X, Y, cfg: AttackConfig, loss_kind="cross_entropy",
                 rng=None, eps=None):
    """PGD over a batch; returns the final iterates only."""
    net._check_loss_kind(loss_kind)
    X = np.asarray(X, dtype=np.float64)
    Y = net._as_labels(Y, X.shape[0], model.num_classes)
    if eps is None:
        eps = np.full(X.shape[0], cfg.epsilon)
    else:
        eps = np.asarray(eps, dtype=np.float64)
    if rng is None:
        rng = substream(cfg.seed, "init")
    eta = cfg.alpha * eps / cfg.n_pgd
    cur = X + _ball_sample(rng, X.shape[0], X.shape[1], eps, cfg.norm)
    _apply_box(cur, cfg.clip_box)
    for _ in range(cfg.n_pgd):
        _, cur = _pgd_step(model, cur, X, Y, eps, eta, cfg, loss_kind)
    return cur


# ---------------------------------------------------------------------------
# BPGD: trajectory scan + binary search to the boundary


def bpgd_batch(model, X, Y, margins, cfg: AttackConfig,
               loss_kind="cross_entropy", rng=None) -> BoundaryBatch:
    """Boundary-seeking PGD over a batch of correctly-classified samples.

    Each sample uses its own noise budget from ``margins``.  Scanning is done
    on the fly: only the current correct/wrong bracket is kept, never the
    whole sequence.  The bracket opens at the first wrongly-classified
    iterate; its correct side is the nearest preceding correctly-classified
    point on the path (the previous iterate, else the random init x_(0),
    else the clean sample itself, which is correct by the caller contract).
    After ``n_binary`` bisections the wrong-side endpoint is returned.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = net._as_labels(Y, X.shape[0], model.num_classes)
    eps = np.asarray(margins, dtype=np.float64)
    if rng is None:
        rng = substream(cfg.seed, "init")
    n, d = X.shape
    found = np.zeros(n, dtype=bool)
    wrong_pt = X.copy()
    correct_pt = X.copy()

    # Scan iterates x_(0)..x_(N), classifying each from the logits the
    # gradient step computes anyway.  Samples freeze as soon as their
    # bracket opens; the rest keep iterating.
    act = np.arange(n)
    eta = cfg.alpha * eps / cfg.n_pgd
    cur = X + _ball_sample(rng, n, d, eps, cfg.norm)
    _apply_box(cur, cfg.clip_box)
    x_act, y_act, eps_act, eta_act = X.copy(), Y.copy(), eps.copy(), eta.copy()
    last_correct = X.copy()   # nearest preceding correct point on the path
    for i in range(cfg.n_pgd + 1):
        if len(act) == 0:
            break
        if i < cfg.n_pgd:
            logits, nxt = _pgd_step(model, cur, x_act, y_act, eps_act,
                                    eta_act, cfg, loss_kind)
        else:
            logits, nxt = model.forward(cur), None
        correct = np.argmax(logits, axis=1) == y_act
        newly = ~correct if i >= 1 else np.zeros(len(act), dtype=bool)
        if np.any(newly):
            gidx = act[newly]
            wrong_pt[gidx] = cur[newly]
            correct_pt[gidx] = last_correct[newly]
            found[gidx] = True
        upd = correct & ~newly
        last_correct[upd] = cur[upd]
        if nxt is None:
            break
        keep = ~newly
        if not np.all(keep):
            act = act[keep]
            x_act, y_act = x_act[keep], y_act[keep]
            eps_act, eta_act = eps_act[keep], eta_act[keep]
            last_correct = last_correct[keep]
            nxt = nxt[keep]
        cur = nxt

    if np.any(found):
        idx = np.where(found)[0]
        A = correct_pt[idx].copy()   # correctly classified
        B = wrong_pt[idx].copy()     # wrongly classified
        Yf = Y[idx]
        for _ in range(cfg.n_binary):
            mid = 0.5 * (A + B)
            ok = model.predict(mid) == Yf
            A[ok] = mid[ok]
            B[~ok] = mid[~ok]
        wrong_pt[idx] = B
        correct_pt[idx] = A
    return BoundaryBatch(found=found, points=wrong_pt, partners=correct_pt)


def bpgd(model, x, y, margin_eps, cfg: AttackConfig,
         loss_kind="cross_entropy", rng=None):
    """Boundary point for one sample, or None when the scan stays correct.

    The sample itself must be correctly classified (caller contract).
    """
    if margin_eps < 0:
        raise ValueError("margin_eps must be >= 0")
    X, Y, single = _check_attack_inputs(model, x, y)
    if not single:
        raise ValueError("bpgd takes one sample; use bpgd_batch")
    if model.predict(X)[0] != Y[0]:
        raise ValueError("bpgd requires a correctly-classified input sample")
    res = bpgd_batch(model, X, Y, np.array([float(margin_eps)]), cfg,
                     loss_kind=loss_kind, rng=rng)
    return res.points[0] if res.found[0] else None


# ---------------------------------------------------------------------------
# SPSA (gradient-free)


def spsa_gradient(objective, x, n_samples, perturb_scale, rng):
    """Simultaneous-perturbation estimate of the gradient of ``objective``.

    ``objective`` maps a (m, d) batch of points to (m,) values; the estimate
    averages (J(x+c v) - J(x-c v)) / (2c) * v over ``n_samples // 2``
    Rademacher direction vectors v (each direction costs two evaluations,
    hence ``n_samples`` must be even).
    """
    if n_samples < 2 or n_samples % 2 != 0:
        raise ValueError("n_samples must be even and >= 2 (paired evaluations)")
    x = np.asarray(x, dtype=np.float64)
    n_pairs = n_samples // 2
    V = rng.integers(0, 2, size=(n_pairs, x.shape[0])) * 2.0 - 1.0
    c = float(perturb_scale)
    plus = np.asarray(objective(x[None, :] + c * V))
    minus = np.asarray(objective(x[None, :] - c * V))
    coeff = (plus - minus) / (2.0 * c)
    return (coeff[:, None] * V).mean(axis=0)


def spsa_attack(model, x, y, cfg: AttackConfig, n_samples=2048,
                perturb_scale=0.01, loss_kind="cross_entropy", rng=None):
    """Black-box PGD: estimated gradients, identical step and projection.

    Uses only forward evaluations of the model, never ``grad_input``.
    """
    net._check_loss_kind(loss_kind)
    X, Y, single = _check_attack_inputs(model, x, y)
    if not single:
        raise ValueError("spsa_attack takes one sample")
    if rng is None:
        rng = substream(cfg.seed, "init")
    x0 = X[0]
    eta = cfg.step_size

    def objective(points):
        logits, _ = net._forward_cached(model, points, keep_caches=False)
        model.counters.forward_samples += points.shape[0]
        return net._loss_from_logits(
            logits, np.full(points.shape[0], Y[0]), loss_kind)

    cur = pgd_init(x0, cfg, rng)
    for _ in range(cfg.n_pgd):
        g = spsa_gradient(objective, cur, n_samples, perturb_scale, rng)
        step = _directions(g[None, :], cfg.norm)[0] * eta
        delta = project_ball(cur + step - x0, cfg.epsilon, cfg.norm)
        cur = _apply_box(x0 + delta, cfg.clip_box)
    return cur
