"""Minimal fully-connected classifier with exact reverse-mode gradients.

Plain float64 numpy throughout.  The network is a stack of linear,
leaky-ReLU and (affine-free) layer-norm layers; parameters live in one flat
vector so optimizers and checkpoints stay trivial.  Gradients with respect
to both the parameters and the input vector are computed by a hand-written
backward pass, which keeps the stack dependency-free and makes
finite-difference verification cheap.

Conventions that matter for reproducibility:
  * leaky-ReLU derivative at 0 is ``negative_slope`` (one-sided subgradient);
  * the margin loss breaks argmax ties by lowest class index;
  * predicted class is ``argmax`` of the logits (lowest index on ties).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, NumericError
from .rngs import substream

LOSS_KINDS = ("cross_entropy", "logit_margin")


# ---------------------------------------------------------------------------
# layer specs


@dataclass
class LayerSpec:
    """One layer of the stack.  Unused fields are ignored for a given kind."""

    kind: str
    in_dim: int = 0
    out_dim: int = 0
    negative_slope: float = 0.01
    dim: int = 0
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.kind == "linear":
            if self.in_dim < 1 or self.out_dim < 1:
                raise ValueError("linear layer needs positive in_dim/out_dim")
        elif self.kind == "leaky_relu":
            if not 0.0 < self.negative_slope < 1.0:
                raise ValueError("negative_slope must be in (0, 1)")
        elif self.kind == "layer_norm":
            if self.dim < 1:
                raise ValueError("layer_norm needs a positive dim")
            if self.epsilon <= 0.0:
                raise ValueError("layer_norm epsilon must be > 0")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")


def linear(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec("linear", in_dim=in_dim, out_dim=out_dim)


def leaky_relu(negative_slope: float = 0.01) -> LayerSpec:
    return LayerSpec("leaky_relu", negative_slope=negative_slope)


def layer_norm(dim: int, epsilon: float = 1e-5) -> LayerSpec:
    return LayerSpec("layer_norm", dim=dim, epsilon=epsilon)


def mlp_layers(in_dim, hidden, num_classes, negative_slope=0.01,
               use_layer_norm=True, ln_epsilon=1e-5):
    """Linear-LR stack with layer norm before every activation but the first.

    ``mlp_layers(2, (32, 64, 128), 2)`` gives
    Linear(2,32)-LR-Linear(32,64)-LN-LR-Linear(64,128)-LN-LR-Linear(128,2).
    """
    layers = []
    width = in_dim
    for i, h in enumerate(hidden):
        layers.append(linear(width, h))
        if use_layer_norm and i > 0:
            layers.append(layer_norm(h, ln_epsilon))
        layers.append(leaky_relu(negative_slope))
        width = h
    layers.append(linear(width, num_classes))
    return layers


def _validate_stack(layers, num_classes):
    if not layers:
        raise ValueError("model needs at least one layer")
    width = None
    for spec in layers:
        if spec.kind == "linear":
            if width is not None and spec.in_dim != width:
                raise ValueError(
                    f"linear in_dim {spec.in_dim} does not chain from width {width}")
            width = spec.out_dim
        elif spec.kind == "layer_norm":
            if width is None or spec.dim != width:
                raise ValueError(
                    f"layer_norm dim {spec.dim} does not match width {width}")
    if width != num_classes:
        raise ValueError(
            f"final width {width} does not equal num_classes {num_classes}")


# ---------------------------------------------------------------------------
# model


@dataclass
class EvalCounters:
    """Instrumentation only; not part of the mathematical model state."""

    forward_samples: int = 0
    grad_input_samples: int = 0
    grad_param_samples: int = 0

    def reset(self):
        self.forward_samples = 0
        self.grad_input_samples = 0
        self.grad_param_samples = 0


class Model:
    """Feed-forward classifier with parameters in one flat float64 vector.

    Canonical parameter order: for each linear layer in stack order, the
    row-major weight matrix followed by the bias vector.  The model is
    treated as immutable during forward/gradient evaluation; only the
    optimizer writes ``params``.
    """

    def __init__(self, layers, num_classes, params=None, seed=0):
        _validate_stack(layers, num_classes)
        self.layers = list(layers)
        self.num_classes = int(num_classes)
        self.seed = int(seed)
        self._slices = []
        offset = 0
        for spec in self.layers:
            if spec.kind != "linear":
                self._slices.append(None)
                continue
            nw = spec.in_dim * spec.out_dim
            wsl = slice(offset, offset + nw)
            bsl = slice(offset + nw, offset + nw + spec.out_dim)
            self._slices.append((wsl, bsl))
            offset += nw + spec.out_dim
        self.n_params = offset
        if params is None:
            self.params = self._init_params(seed)
        else:
            params = np.asarray(params, dtype=np.float64).ravel()
            if params.size != self.n_params:
                raise ValueError(
                    f"expected {self.n_params} parameters, got {params.size}")
            self.params = params.copy()
        self.counters = EvalCounters()

    def _init_params(self, seed):
        # fan-in uniform: each linear layer's W and b in +/- 1/sqrt(in_dim)
        rng = substream(seed, "init")
        params = np.empty(self.n_params, dtype=np.float64)
        for spec, slices in zip(self.layers, self._slices):
            if slices is None:
                continue
            wsl, bsl = slices
            bound = 1.0 / np.sqrt(spec.in_dim)
            params[wsl] = rng.uniform(-bound, bound, wsl.stop - wsl.start)
            params[bsl] = rng.uniform(-bound, bound, bsl.stop - bsl.start)
        return params

    @property
    def in_dim(self) -> int:
        for spec in self.layers:
            if spec.kind == "linear":
                return spec.in_dim
        raise ValueError("model has no linear layer")

    def weights(self, layer_index):
        """(W, b) views for the linear layer at ``layer_index``."""
        slices = self._slices[layer_index]
        if slices is None:
            raise ValueError(f"layer {layer_index} is not linear")
        spec = self.layers[layer_index]
        wsl, bsl = slices
        W = self.params[wsl].reshape(spec.in_dim, spec.out_dim)
        return W, self.params[bsl]

    def copy(self) -> "Model":
        return Model(self.layers, self.num_classes, params=self.params,
                     seed=self.seed)

    # -- evaluation ---------------------------------------------------------

    def forward(self, x):
        """Logits for one sample (d,) -> (k,) or a batch (n,d) -> (n,k)."""
        X, single = _as_batch(x, self.in_dim)
        logits, _ = _forward_cached(self, X, keep_caches=False)
        self.counters.forward_samples += X.shape[0]
        return logits[0] if single else logits

    def predict(self, x):
        """Predicted class ids (argmax logits, lowest index wins ties)."""
        return np.argmax(self.forward(x), axis=-1)


def _as_batch(x, in_dim):
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        if X.shape[0] != in_dim:
            raise ValueError(f"input has dim {X.shape[0]}, model expects {in_dim}")
        return X[None, :], True
    if X.ndim == 2:
        if X.shape[1] != in_dim:
            raise ValueError(f"input has dim {X.shape[1]}, model expects {in_dim}")
        return X, False
    raise ValueError(f"input must be 1-D or 2-D, got ndim={X.ndim}")


def _as_labels(y, n, num_classes):
    Y = np.asarray(y)
    if Y.ndim == 0:
        Y = Y[None]
    if Y.shape != (n,):
        raise ValueError(f"labels have shape {Y.shape}, expected ({n},)")
    if not np.issubdtype(Y.dtype, np.integer):
        Yi = Y.astype(np.int64)
        if not np.array_equal(Yi, Y):
            raise ValueError("labels must be integers")
        Y = Yi
    if Y.min(initial=0) < 0 or Y.max(initial=0) >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return Y.astype(np.int64)


# ---------------------------------------------------------------------------
# forward / backward


def _forward_cached(model, X, keep_caches=True):
    """Run the stack on a (n, d) batch, caching what backward needs."""
    caches = [] if keep_caches else None
    H = X
    for spec, slices in zip(model.layers, model._slices):
        if spec.kind == "linear":
            wsl, _bsl = slices
            W = model.params[wsl].reshape(spec.in_dim, spec.out_dim)
            b = model.params[_bsl]
            if keep_caches:
                caches.append(("linear", H, W))
            H = H @ W + b
        elif spec.kind == "leaky_relu":
            if keep_caches:
                caches.append(("leaky_relu", H))
            H = np.where(H > 0, H, spec.negative_slope * H)
        else:  # layer_norm, normalization only (no affine)
            mu = H.mean(axis=1, keepdims=True)
            xc = H - mu
            var = (xc * xc).mean(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(var + spec.epsilon)
            H = xc * inv
            if keep_caches:
                caches.append(("layer_norm", H, inv))
    return H, caches


def _backward(model, caches, dH, want_input, want_params):
    """Backpropagate dL/dlogits through the cached stack."""
    gparams = np.zeros(model.n_params) if want_params else None
    for spec, slices, cache in zip(reversed(model.layers),
                                   reversed(model._slices),
                                   reversed(caches)):
        if spec.kind == "linear":
            _, H_in, W = cache
            if want_params:
                wsl, bsl = slices
                gparams[wsl] = (H_in.T @ dH).ravel()
                gparams[bsl] = dH.sum(axis=0)
            dH = dH @ W.T
        elif spec.kind == "leaky_relu":
            _, H_in = cache
            dH = dH * np.where(H_in > 0, 1.0, spec.negative_slope)
        else:  # layer_norm: y = (x - mu) / sqrt(var + eps), biased var
            _, Y_out, inv = cache
            m = dH.mean(axis=1, keepdims=True)
            my = (dH * Y_out).mean(axis=1, keepdims=True)
            dH = inv * (dH - m - Y_out * my)
    dX = dH if want_input else None
    return dX, gparams


# ---------------------------------------------------------------------------
# losses


def softmax_probs(logits):
    """Numerically stabilized softmax; rows sum to 1 within 1e-12."""
    Z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(Z)):
        raise NumericError("softmax requires finite logits")
    Zs = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Zs)
    return E / E.sum(axis=-1, keepdims=True)


def _check_loss_kind(kind):
    if kind not in LOSS_KINDS:
        raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")


def _loss_from_logits(logits, Y, kind):
    """Per-sample losses from a (n, k) logit batch."""
    if kind == "cross_entropy":
        # logsumexp(z) - z_y; never negative since logsumexp >= max(z) >= z_y
        zmax = logits.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
        return lse - logits[np.arange(len(Y)), Y]
    # logit_margin: max_{j != y} z_j - z_y  (negative iff correctly classified)
    masked = logits.copy()
    masked[np.arange(len(Y)), Y] = -np.inf
    return masked.max(axis=1) - logits[np.arange(len(Y)), Y]


def _dlogits(logits, Y, kind, weights=None):
    """dL/dlogits for the summed (weighted) per-sample losses."""
    n = logits.shape[0]
    rows = np.arange(n)
    if kind == "cross_entropy":
        D = softmax_probs(logits)
        D[rows, Y] -= 1.0
    else:
        masked = logits.copy()
        masked[rows, Y] = -np.inf
        j = np.argmax(masked, axis=1)  # lowest index wins ties
        D = np.zeros_like(logits)
        D[rows, j] = 1.0
        D[rows, Y] -= 1.0
    if weights is not None:
        D = D * weights[:, None]
    return D


def loss(model, x, y, kind="cross_entropy"):
    """Scalar loss for one sample, or per-sample losses for a batch.

    ``cross_entropy`` is -log P_y; ``logit_margin`` is max_{j!=y} z_j - z_y
    (higher means more adversarial, so gradient ascent attacks both kinds).
    """
    _check_loss_kind(kind)
    X, single = _as_batch(x, model.in_dim)
    Y = _as_labels(y, X.shape[0], model.num_classes)
    logits, _ = _forward_cached(model, X, keep_caches=False)
    model.counters.forward_samples += X.shape[0]
    values = _loss_from_logits(logits, Y, kind)
    return float(values[0]) if single else values


def grad_input(model, x, y, kind="cross_entropy"):
    """Exact gradient of the loss w.r.t. the input.

    For a batch, row i is the gradient of sample i's own loss (rows are
    independent because every layer acts per row).
    """
    _check_loss_kind(kind)
    X, single = _as_batch(x, model.in_dim)
    Y = _as_labels(y, X.shape[0], model.num_classes)
    logits, caches = _forward_cached(model, X)
    dH = _dlogits(logits, Y, kind)
    dX, _ = _backward(model, caches, dH, want_input=True, want_params=False)
    model.counters.forward_samples += X.shape[0]
    model.counters.grad_input_samples += X.shape[0]
    return dX[0] if single else dX


def _loss_and_grad_input(model, X, Y, kind):
    """(per-sample losses, per-sample input grads) in one pass; batch only."""
    logits, caches = _forward_cached(model, X)
    values = _loss_from_logits(logits, Y, kind)
    dH = _dlogits(logits, Y, kind)
    dX, _ = _backward(model, caches, dH, want_input=True, want_params=False)
    model.counters.forward_samples += X.shape[0]
    model.counters.grad_input_samples += X.shape[0]
    return values, dX


def _logits_and_grad_input(model, X, Y, kind):
    """(logits, per-sample input grads) sharing one forward pass; batch only."""
    logits, caches = _forward_cached(model, X)
    dH = _dlogits(logits, Y, kind)
    dX, _ = _backward(model, caches, dH, want_input=True, want_params=False)
    model.counters.forward_samples += X.shape[0]
    model.counters.grad_input_samples += X.shape[0]
    return logits, dX


def grad_params(model, x, y, weights=None, kind="cross_entropy"):
    """Gradient of sum_i weights_i * loss_i w.r.t. the flat parameter vector."""
    _check_loss_kind(kind)
    X, _ = _as_batch(x, model.in_dim)
    if X.shape[0] == 0:
        raise ValueError("grad_params needs a nonempty batch")
    Y = _as_labels(y, X.shape[0], model.num_classes)
    if weights is None:
        W = np.ones(X.shape[0])
    else:
        W = np.asarray(weights, dtype=np.float64).ravel()
        if W.shape != (X.shape[0],):
            raise ValueError("weights must have one entry per sample")
        if not np.all(np.isfinite(W)):
            raise NumericError("sample weights must be finite")
    logits, caches = _forward_cached(model, X)
    dH = _dlogits(logits, Y, kind, weights=W)
    _, gparams = _backward(model, caches, dH, want_input=False, want_params=True)
    model.counters.forward_samples += X.shape[0]
    model.counters.grad_param_samples += X.shape[0]
    return gparams


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adaptive-moment optimizer with bias correction.

    Rejects non-finite gradients without touching parameters or state.
    """

    def __init__(self, n_params, config=None):
        self.config = config or AdamConfig()
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, model, grad):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != model.params.shape:
            raise ValueError("gradient length does not match parameter count")
        if not np.all(np.isfinite(grad)):
            raise NumericError("non-finite gradient; step rejected")
        c = self.config
        self.t += 1
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * grad * grad
        mhat = self.m / (1.0 - c.beta1 ** self.t)
        vhat = self.v / (1.0 - c.beta2 ** self.t)
        model.params -= c.lr * mhat / (np.sqrt(vhat) + c.eps)


def sgd_adamlike_step(model, grad, opt: Adam):
    """Functional alias: one optimizer step on ``model`` using ``opt`` state."""
    opt.step(model, grad)
    return model, opt


# ---------------------------------------------------------------------------
# checkpoints


_CKPT_MAGIC = "mf-ckpt v1"


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_checkpoint(model, path):
    """Text checkpoint: header, one line per layer, one line per param block."""
    lines = [f"{_CKPT_MAGIC} {len(model.layers)} {model.num_classes} {model.seed}"]
    for spec in model.layers:
        if spec.kind == "linear":
            lines.append(f"linear {spec.in_dim} {spec.out_dim}")
        elif spec.kind == "leaky_relu":
            lines.append(f"leaky_relu {_fmt(spec.negative_slope)}")
        else:
            lines.append(f"layer_norm {spec.dim} {_fmt(spec.epsilon)}")
    for slices in model._slices:
        if slices is None:
            continue
        wsl, bsl = slices
        lines.append(" ".join(_fmt(v) for v in model.params[wsl]))
        lines.append(" ".join(_fmt(v) for v in model.params[bsl]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Model:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CheckpointError(f"{path}: empty checkpoint file")

    def fail(idx, msg):
        raise CheckpointError(f"{path}: line {idx + 1}: {msg}")

    head = lines[0].split()
    if len(head) != 5 or " ".join(head[:2]) != _CKPT_MAGIC:
        fail(0, "bad header, expected 'mf-ckpt v1 <layers> <classes> <seed>'")
    try:
        n_layers, num_classes, seed = int(head[2]), int(head[3]), int(head[4])
    except ValueError:
        fail(0, "header counts must be integers")
    if len(lines) < 1 + n_layers:
        fail(len(lines) - 1, f"expected {n_layers} layer lines")
    layers = []
    for i in range(1, 1 + n_layers):
        parts = lines[i].split()
        try:
            if parts[0] == "linear" and len(parts) == 3:
                layers.append(linear(int(parts[1]), int(parts[2])))
            elif parts[0] == "leaky_relu" and len(parts) == 2:
                layers.append(leaky_relu(float(parts[1])))
            elif parts[0] == "layer_norm" and len(parts) == 3:
                layers.append(layer_norm(int(parts[1]), float(parts[2])))
            else:
                fail(i, f"unrecognized layer line {lines[i]!r}")
        except (ValueError, IndexError):
            fail(i, f"unparsable layer line {lines[i]!r}")
    try:
        _validate_stack(layers, num_classes)
    except ValueError as exc:
        fail(0, f"inconsistent layer stack: {exc}")
    blocks = []
    row = 1 + n_layers
    for spec in layers:
        if spec.kind != "linear":
            continue
        for expected in (spec.in_dim * spec.out_dim, spec.out_dim):
            if row >= len(lines) or not lines[row].strip():
                fail(min(row, len(lines) - 1), "missing parameter block")
            try:
                vals = np.array([float(t) for t in lines[row].split()])
            except ValueError:
                fail(row, "parameter block has a non-numeric token")
            if vals.size != expected:
                fail(row, f"parameter block has {vals.size} values, expected {expected}")
            blocks.append(vals)
            row += 1
    params = np.concatenate(blocks) if blocks else np.zeros(0)
    return Model(layers, num_classes, params=params, seed=seed)
