"""Increasing-margin adversarial training on small fully-connected nets.

The package bundles a minimal differentiable network, projected-gradient
attacks (including a boundary-seeking variant and a black-box SPSA probe),
the increasing-margin training loop with its per-sample margin table, plain
and fixed-budget adversarial baselines, and a robustness evaluation harness,
all exercised on synthetic 2-D datasets.
"""

__version__ = "0.1.0"

from .attacks import (AttackConfig, BoundaryBatch, Trajectory, attack_batch,
                      bpgd, bpgd_batch, pgd_attack, pgd_init, project_ball,
                      spsa_attack, spsa_gradient)
from .data import Dataset, load_csv, make_blobs, make_moons, save_csv
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .estimators import (AdversarialMLPClassifier, IncreasingMarginClassifier,
                         MLPNetClassifier)
from .evaluate import (EquilibriumStats, MarginHistogram, MaskCounts,
                       RobustnessReport, boundary_mask, dice_metrics,
                       equilibrium_diagnostic, evaluate_robustness,
                       evaluate_white_noise, margin_histogram,
                       rasterize_boundary, write_pgm)
from .net import (Adam, AdamConfig, LayerSpec, Model, grad_input, grad_params,
                  layer_norm, leaky_relu, linear, load_checkpoint, loss,
                  mlp_layers, save_checkpoint, sgd_adamlike_step,
                  softmax_probs)
from .train import (EpochLog, MarginTable, TrainConfig, TrainResult, ce_train,
                    ima_epoch, ima_margin_update, ima_train,
                    vanilla_adv_train)

__all__ = [
    "__version__",
    "AttackConfig", "BoundaryBatch", "Trajectory", "attack_batch", "bpgd",
    "bpgd_batch", "pgd_attack", "pgd_init", "project_ball", "spsa_attack",
    "spsa_gradient",
    "Dataset", "load_csv", "make_blobs", "make_moons", "save_csv",
    "CheckpointError", "ConfigError", "DataError", "NumericError",
    "AdversarialMLPClassifier", "IncreasingMarginClassifier",
    "MLPNetClassifier",
    "EquilibriumStats", "MarginHistogram", "MaskCounts", "RobustnessReport",
    "boundary_mask", "dice_metrics", "equilibrium_diagnostic",
    "evaluate_robustness", "evaluate_white_noise", "margin_histogram",
    "rasterize_boundary", "write_pgm",
    "Adam", "AdamConfig", "LayerSpec", "Model", "grad_input", "grad_params",
    "layer_norm", "leaky_relu", "linear", "load_checkpoint", "loss",
    "mlp_layers", "save_checkpoint", "sgd_adamlike_step", "softmax_probs",
    "EpochLog", "MarginTable", "TrainConfig", "TrainResult", "ce_train",
    "ima_epoch", "ima_margin_update", "ima_train", "vanilla_adv_train",
]
