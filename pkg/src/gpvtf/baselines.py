"""K-means reference baselines on raw features under a missing-data mask.

Absent rows are mean-imputed (zero after standardization) so every sample
still receives a label.
"""
from __future__ import annotations

import numpy as np

from .clustering import kmeans
from .data import MissingMask, PairedDataset, standardize
from .metrics import accuracy, nmi

BASELINES = ("kmeans-visual", "kmeans-tactile", "kmeans-concat")


def baseline_labels(name: str, dataset: PairedDataset, mask: MissingMask, seed: int, n_init: int = 10):
    x1 = standardize(dataset.visual, mask.visual_present)
    x2 = standardize(dataset.tactile, mask.tactile_present)
    if name == "kmeans-visual":
        x = x1
    elif name == "kmeans-tactile":
        x = x2
    elif name == "kmeans-concat":
        x = np.hstack([x1, x2])
    else:
        raise ValueError(f"unknown baseline {name!r}; expected one of {BASELINES}")
    return kmeans(x, dataset.k, seed=seed, n_init=n_init).labels


def evaluate_baseline(name, dataset, mask, seed, n_init=10) -> tuple[float, float]:
    labels = baseline_labels(name, dataset, mask, seed, n_init)
    return accuracy(dataset.labels, labels), nmi(dataset.labels, labels)
