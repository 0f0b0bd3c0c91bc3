"""Synthetic datasets (moons, Gaussian blobs), splits, and CSV round trips.

Generators are pure functions of their parameters and seed; datasets are
immutable after construction and carry their provenance so every file on
disk can be regenerated exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .rngs import substream

SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    x: np.ndarray                  # (n, d) float64
    y: np.ndarray                  # (n,) int64
    split: np.ndarray              # (n,) strings from SPLITS
    num_classes: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.split = np.asarray(self.split)
        n = self.x.shape[0]
        if self.x.ndim != 2:
            raise DataError("features must form a (n, d) array")
        if n == 0:
            raise DataError("empty dataset")
        if self.y.shape != (n,) or self.split.shape != (n,):
            raise DataError("features, labels, and splits must align")
        if self.y.min() < 0 or self.y.max() >= self.num_classes:
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        bad = ~np.isin(self.split, SPLITS)
        if np.any(bad):
            raise DataError(f"unknown split tag {self.split[bad][0]!r}")

    @property
    def feature_dim(self) -> int:
        return self.x.shape[1]

    def subset(self, name):
        """(X, Y) arrays for one split; views, do not mutate."""
        if name not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")
        mask = self.split == name
        return self.x[mask], self.y[mask]

    def counts(self):
        return {name: int((self.split == name).sum()) for name in SPLITS}

    def bounding_box(self):
        """((x_lo, x_hi), (y_lo, y_hi)) over all samples; 2-D data only."""
        if self.feature_dim != 2:
            raise ValueError("bounding_box is defined for 2-D data only")
        lo = self.x.min(axis=0)
        hi = self.x.max(axis=0)
        return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))


def _balanced_counts(total, num_classes):
    base = total // num_classes
    counts = [base] * num_classes
    for c in range(total - base * num_classes):
        counts[c] += 1
    return counts


def make_moons(n_per_split=(20000, 2000, 2000), noise_std=0.05, seed=0):
    """Two interleaving half-circles with isotropic Gaussian noise.

    Class 0 lies on (cos t, sin t) and class 1 on (1 - cos t, 1 - sin t - 0.5)
    for t uniform in [0, pi].  Classes are balanced within each split (class 0
    takes the extra sample when a split size is odd).
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    xs, ys, tags = [], [], []
    for split_idx, (name, n) in enumerate(zip(SPLITS, n_per_split)):
        if n == 0:
            continue
        rng = substream(seed, "moons", split_idx)
        n0, n1 = _balanced_counts(n, 2)
        t0 = rng.uniform(0.0, np.pi, n0)
        t1 = rng.uniform(0.0, np.pi, n1)
        pts = np.concatenate([
            np.column_stack([np.cos(t0), np.sin(t0)]),
            np.column_stack([1.0 - np.cos(t1), 1.0 - np.sin(t1) - 0.5]),
        ])
        if noise_std > 0:
            pts = pts + rng.normal(0.0, noise_std, pts.shape)
        xs.append(pts)
        ys.append(np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)]))
        tags.append(np.full(n, name))
    if not xs:
        raise DataError("empty dataset: all split sizes are zero")
    return Dataset(
        x=np.concatenate(xs), y=np.concatenate(ys), split=np.concatenate(tags),
        num_classes=2,
        provenance={"generator": "moons", "n_per_split": list(n_per_split),
                    "noise_std": noise_std, "seed": seed})


def make_blobs(centers, std, n, seed=0):
    """Isotropic Gaussian clusters, ``n`` samples per center, all split=train.

    Coincident centers are allowed but flagged in the provenance.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 2:
        raise ValueError("make_blobs needs at least 2 centers")
    if std < 0:
        raise ValueError("std must be >= 0")
    if n <= 0:
        raise DataError("empty dataset: n per class must be positive")
    k, d = centers.shape
    rng = substream(seed, "blobs")
    x = np.repeat(centers, n, axis=0) + rng.normal(0.0, std, (k * n, d))
    y = np.repeat(np.arange(k, dtype=np.int64), n)
    degenerate = False
    for i in range(k):
        for j in range(i + 1, k):
            if np.array_equal(centers[i], centers[j]):
                degenerate = True
    return Dataset(
        x=x, y=y, split=np.full(k * n, "train"), num_classes=k,
        provenance={"generator": "blobs", "centers": centers.tolist(),
                    "std": std, "n": n, "seed": seed,
                    "degenerate_centers": degenerate})


# ---------------------------------------------------------------------------
# CSV round trip


def _meta_path(path):
    path = str(path)
    stem = path[:-4] if path.endswith(".csv") else path
    return stem + ".meta"


def save_csv(dataset: Dataset, path):
    """Write ``split,label,f1,...,fd`` rows plus a provenance sidecar."""
    d = dataset.feature_dim
    header = "split,label," + ",".join(f"f{i + 1}" for i in range(d))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for tag, label, row in zip(dataset.split, dataset.y, dataset.x):
            feats = ",".join(f"{v:.17g}" for v in row)
            fh.write(f"{tag},{label},{feats}\n")
    meta = {"num_classes": dataset.num_classes, "provenance": dataset.provenance}
    with open(_meta_path(path), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_csv(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) < 3 or header[:2] != ["split", "label"]:
        raise DataError(f"{path}: row 1: bad header {lines[0]!r}")
    d = len(header) - 2
    if len(lines) == 1:
        raise DataError(f"{path}: empty dataset (header only)")
    xs = np.empty((len(lines) - 1, d))
    ys = np.empty(len(lines) - 1, dtype=np.int64)
    tags = np.empty(len(lines) - 1, dtype=object)
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != d + 2:
            raise DataError(
                f"{path}: row {i}: expected {d + 2} fields, got {len(parts)}")
        if parts[0] not in SPLITS:
            raise DataError(f"{path}: row {i}: unknown split tag {parts[0]!r}")
        tags[i - 2] = parts[0]
        try:
            ys[i - 2] = int(parts[1])
            xs[i - 2] = [float(v) for v in parts[2:]]
        except ValueError:
            raise DataError(f"{path}: row {i}: non-numeric field") from None
        if ys[i - 2] < 0:
            raise DataError(f"{path}: row {i}: negative label")
    num_classes = int(ys.max()) + 1
    provenance = {"generator": "file", "path": str(path)}
    try:
        with open(_meta_path(path)) as fh:
            meta = json.load(fh)
        declared = int(meta.get("num_classes", num_classes))
        if ys.max() >= declared:
            row = int(np.argmax(ys >= declared)) + 2
            raise DataError(
                f"{path}: row {row}: label {ys.max()} >= num_classes {declared}")
        num_classes = declared
        provenance = meta.get("provenance", provenance)
    except FileNotFoundError:
        pass
    return Dataset(x=xs, y=ys, split=tags.astype(str), num_classes=num_classes,
                   provenance=provenance)
