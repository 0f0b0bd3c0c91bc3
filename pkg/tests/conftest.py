"""Shared test helpers: independent oracles and expensive trained fixtures.

The oracles here (manual forward pass, central finite differences, linear
hyperplane geometry) deliberately re-derive quantities without touching the
library's gradient or attack code paths, so they can certify them.
"""

import numpy as np
import pytest

import imatrain as im


# ---------------------------------------------------------------------------
# independent oracles


def manual_forward(model, x):
    """Re-implemented forward pass; also returns pre-activation stacks."""
    h = np.asarray(x, dtype=np.float64)
    preacts = []
    for i, spec in enumerate(model.layers):
        if spec.kind == "linear":
            W, b = model.weights(i)
            h = h @ W + b
        elif spec.kind == "leaky_relu":
            preacts.append(h.copy())
            h = np.where(h > 0, h, spec.negative_slope * h)
        else:
            mu = h.mean()
            var = ((h - mu) ** 2).mean()
            h = (h - mu) / np.sqrt(var + spec.epsilon)
    return h, preacts


def fd_grad_input(model, x, y, kind, h=1e-4):
    """Central finite differences of the loss w.r.t. the input."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (im.loss(model, xp, y, kind) - im.loss(model, xm, y, kind)) / (2 * h)
    return g


def fd_grad_params(model, X, Y, weights, kind, coords, h=1e-4):
    """Central finite differences of sum(w_i * loss_i) w.r.t. chosen params."""
    out = np.zeros(len(coords))
    for j, c in enumerate(coords):
        orig = model.params[c]
        model.params[c] = orig + h
        lp = float((im.loss(model, X, Y, kind) * weights).sum())
        model.params[c] = orig - h
        lm = float((im.loss(model, X, Y, kind) * weights).sum())
        model.params[c] = orig
        out[j] = (lp - lm) / (2 * h)
    return out


def away_from_kinks(model, x, y, kind, min_gap=1e-3):
    """True when no leaky-ReLU pre-activation or top-two logits sit within
    ``min_gap`` of a non-differentiability."""
    logits, preacts = manual_forward(model, x)
    for p in preacts:
        if np.abs(p).min() < min_gap:
            return False
    order = np.sort(logits)
    if order[-1] - order[-2] < min_gap:
        return False
    if kind == "logit_margin":
        rest = np.delete(logits, y)
        rest = np.sort(rest)
        if len(rest) > 1 and rest[-1] - rest[-2] < min_gap:
            return False
    return True


def random_small_model(rng, max_linear=4, max_dim=16, in_dim=None,
                       num_classes=None):
    """Random stacked net within the small-network envelope."""
    n_linear = int(rng.integers(1, max_linear + 1))
    in_dim = in_dim or int(rng.integers(2, 6))
    num_classes = num_classes or int(rng.integers(2, 5))
    dims = [in_dim] + [int(rng.integers(2, max_dim + 1))
                       for _ in range(n_linear - 1)] + [num_classes]
    layers = []
    for i in range(n_linear):
        layers.append(im.linear(dims[i], dims[i + 1]))
        if i < n_linear - 1:
            if rng.random() < 0.3:
                layers.append(im.layer_norm(dims[i + 1]))
            layers.append(im.leaky_relu(0.01 + 0.2 * rng.random()))
    return im.Model(layers, num_classes, seed=int(rng.integers(0, 2 ** 31)))


def linear_2class_model(W, b):
    """logits = x @ W + b with W of shape (d, 2)."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    params = np.concatenate([W.ravel(), b])
    return im.Model([im.linear(W.shape[0], 2)], 2, params=params)


def hyperplane_distance(W, b, x):
    """Distance from x to the 2-class decision hyperplane of (W, b)."""
    w = W[:, 1] - W[:, 0]
    c = b[1] - b[0]
    return abs(float(np.dot(x, w) + c)) / np.linalg.norm(w)


def threshold_model_1d():
    """1-D two-class model predicting class 1 iff x > 0.5."""
    return linear_2class_model(np.array([[0.0, 1.0]]), np.array([0.0, -0.5]))


def spearman_sign(xs, ys):
    """Sign of the Spearman rank correlation (ties broken by position)."""
    rx = np.argsort(np.argsort(xs))
    ry = np.argsort(np.argsort(ys))
    rho = np.corrcoef(rx, ry)[0, 1]
    return np.sign(rho)


# ---------------------------------------------------------------------------
# expensive shared fixtures (full-scale runs used by the acceptance suite)

MOONS_SEED = 7
MODEL_SEED = 11
EVAL_SEED = 99

MOONS_PROTOCOL = dict(epochs=30, batch_size=128, beta=0.5, eps_max=0.3)


def moons_train_config(seed=MODEL_SEED, **overrides):
    base = dict(MOONS_PROTOCOL)
    base.update(overrides)
    return im.TrainConfig(seed=seed,
                          attack=im.AttackConfig(n_pgd=20, alpha=4.0,
                                                 seed=seed),
                          **base)


def moons_model(seed=MODEL_SEED):
    return im.Model(im.mlp_layers(2, (32, 64, 128), 2), 2, seed=seed)


@pytest.fixture(scope="session")
def moons_full():
    return im.make_moons(seed=MOONS_SEED)


@pytest.fixture(scope="session")
def ce_moons(moons_full):
    model = moons_model()
    result = im.ce_train(model, moons_full, moons_train_config())
    return model, result


@pytest.fixture(scope="session")
def ima_moons(moons_full):
    model = moons_model()
    result = im.ima_train(model, moons_full, moons_train_config())
    return model, result


@pytest.fixture(scope="session")
def moons_small():
    """Small moons for trainer tests that do not need the full protocol."""
    return im.make_moons((1200, 200, 1000), noise_std=0.05, seed=3)
