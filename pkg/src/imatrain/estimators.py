"""Scikit-learn style estimators wrapping the functional trainers.

Three classifiers share one small MLP backbone:

  * ``MLPNetClassifier``      -- plain cross-entropy training (baseline);
  * ``AdversarialMLPClassifier`` -- fixed-budget adversarial training;
  * ``IncreasingMarginClassifier`` -- per-sample adaptive noise budgets with
    boundary-seeking attacks; exposes the fitted margins as ``margins_``.

All follow the fit/predict/get_params contract so they compose with
pipelines, grid search, and cross-validation.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attacks import AttackConfig
from .data import Dataset
from .net import AdamConfig, Model, mlp_layers, softmax_probs
from .rngs import substream
from .train import TrainConfig, ce_train, ima_train, vanilla_adv_train


class _BaseNetClassifier(ClassifierMixin, BaseEstimator):

    def __init__(self, hidden=(32, 64, 128), negative_slope=0.01,
                 use_layer_norm=True, epochs=30, batch_size=128,
                 learning_rate=1e-3, norm="l2", n_pgd=20, alpha=4.0,
                 n_binary=10, clip_box=None, validation_fraction=0.0,
                 seed=0):
        self.hidden = hidden
        self.negative_slope = negative_slope
        self.use_layer_norm = use_layer_norm
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.norm = norm
        self.n_pgd = n_pgd
        self.alpha = alpha
        self.n_binary = n_binary
        self.clip_box = clip_box
        self.validation_fraction = validation_fraction
        self.seed = seed

    # -- helpers ------------------------------------------------------------

    def _as_dataset(self, X, y):
        X, y = check_X_y(X, y)
        X = np.asarray(X, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes to fit a classifier")
        n = X.shape[0]
        split = np.full(n, "train")
        if self.validation_fraction > 0.0:
            n_val = max(1, int(round(self.validation_fraction * n)))
            order = substream(self.seed, "valsplit").permutation(n)
            split[order[:n_val]] = "val"
        return Dataset(x=X, y=y_idx, split=split,
                       num_classes=len(self.classes_),
                       provenance={"generator": "array"})

    def _train_config(self, **overrides):
        attack = AttackConfig(norm=self.norm, epsilon=0.0, n_pgd=self.n_pgd,
                              alpha=self.alpha, n_binary=self.n_binary,
                              seed=self.seed, clip_box=self.clip_box)
        base = dict(epochs=self.epochs, batch_size=self.batch_size,
                    attack=attack, optimizer=AdamConfig(lr=self.learning_rate),
                    seed=self.seed)
        base.update(overrides)
        return TrainConfig(**base)

    def _fresh_model(self, dataset):
        layers = mlp_layers(dataset.feature_dim, tuple(self.hidden),
                            dataset.num_classes,
                            negative_slope=self.negative_slope,
                            use_layer_norm=self.use_layer_norm)
        return Model(layers, dataset.num_classes, seed=self.seed)

    # -- prediction surface --------------------------------------------------

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return self.model_.forward(np.asarray(X, dtype=np.float64))

    def predict_proba(self, X):
        return softmax_probs(self.decision_function(X))

    def predict(self, X):
        idx = np.argmax(self.decision_function(X), axis=-1)
        return self.classes_[idx]


class MLPNetClassifier(_BaseNetClassifier):
    """Baseline MLP trained with cross-entropy on clean data."""

    def fit(self, X, y):
        ds = self._as_dataset(X, y)
        model = self._fresh_model(ds)
        result = ce_train(model, ds, self._train_config())
        self.model_ = result.model
        self.epoch_logs_ = result.logs
        return self


class AdversarialMLPClassifier(_BaseNetClassifier):
    """MLP trained on the average of clean and attacked batch losses."""

    def __init__(self, eps=0.3, hidden=(32, 64, 128), negative_slope=0.01,
                 use_layer_norm=True, epochs=30, batch_size=128,
                 learning_rate=1e-3, norm="l2", n_pgd=20, alpha=4.0,
                 n_binary=10, clip_box=None, validation_fraction=0.0,
                 seed=0):
        super().__init__(hidden=hidden, negative_slope=negative_slope,
                         use_layer_norm=use_layer_norm, epochs=epochs,
                         batch_size=batch_size, learning_rate=learning_rate,
                         norm=norm, n_pgd=n_pgd, alpha=alpha,
                         n_binary=n_binary, clip_box=clip_box,
                         validation_fraction=validation_fraction, seed=seed)
        self.eps = eps

    def fit(self, X, y):
        ds = self._as_dataset(X, y)
        model = self._fresh_model(ds)
        result = vanilla_adv_train(model, ds, self.eps, self._train_config())
        self.model_ = result.model
        self.epoch_logs_ = result.logs
        return self


class IncreasingMarginClassifier(_BaseNetClassifier):
    """MLP trained with per-sample noise budgets that grow toward the true
    sample margins; boundary points found inside a sample's budget shrink it,
    misses expand it by ``delta_eps`` per epoch up to ``eps_max``."""

    def __init__(self, eps_max=0.3, beta=0.5, delta_eps=None,
                 hidden=(32, 64, 128), negative_slope=0.01,
                 use_layer_norm=True, epochs=30, batch_size=128,
                 learning_rate=1e-3, norm="l2", n_pgd=20, alpha=4.0,
                 n_binary=10, clip_box=None, validation_fraction=0.0,
                 seed=0):
        super().__init__(hidden=hidden, negative_slope=negative_slope,
                         use_layer_norm=use_layer_norm, epochs=epochs,
                         batch_size=batch_size, learning_rate=learning_rate,
                         norm=norm, n_pgd=n_pgd, alpha=alpha,
                         n_binary=n_binary, clip_box=clip_box,
                         validation_fraction=validation_fraction, seed=seed)
        self.eps_max = eps_max
        self.beta = beta
        self.delta_eps = delta_eps

    def fit(self, X, y):
        ds = self._as_dataset(X, y)
        model = self._fresh_model(ds)
        cfg = self._train_config(beta=self.beta, eps_max=self.eps_max,
                                 delta_eps=self.delta_eps)
        result = ima_train(model, ds, cfg)
        self.model_ = result.model
        self.margins_ = result.table.margins.copy()
        self.margin_table_ = result.table
        self.epoch_logs_ = result.logs
        return self
