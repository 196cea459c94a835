"""Paired visual/tactile feature datasets, missing-slot masks and mini-batches."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import AlignmentError, LabelError, ParameterError, ParseError
from .rng import make_rng


@dataclass(frozen=True)
class PairedDataset:
    visual: np.ndarray   # n x d1
    tactile: np.ndarray  # n x d2
    labels: np.ndarray   # n, ints in 0..k-1
    k: int

    def __post_init__(self):
        n = self.visual.shape[0]
        if self.tactile.shape[0] != n or self.labels.shape[0] != n:
            raise AlignmentError(
                f"sample counts differ: visual {n}, tactile {self.tactile.shape[0]}, labels {self.labels.shape[0]}"
            )
        if self.k < 1:
            raise ParameterError(f"k must be >= 1, got {self.k}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.k):
            bad = self.labels[(self.labels < 0) | (self.labels >= self.k)][0]
            raise LabelError(f"label {bad} outside 0..{self.k - 1}")
        for arr in (self.visual, self.tactile, self.labels):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.visual.shape[0]


@dataclass(frozen=True)
class MissingMask:
    visual_present: np.ndarray
    tactile_present: np.ndarray
    missing_rate: float

    def __post_init__(self):
        if self.visual_present.shape != self.tactile_present.shape:
            raise AlignmentError("presence vectors have different lengths")
        if not np.all(self.visual_present | self.tactile_present):
            raise ParameterError("every sample must keep at least one modality")
        self.visual_present.setflags(write=False)
        self.tactile_present.setflags(write=False)

    @property
    def n(self) -> int:
        return self.visual_present.shape[0]

    @property
    def n_masked(self) -> int:
        return int((~self.visual_present).sum() + (~self.tactile_present).sum())

    @classmethod
    def complete(cls, n: int) -> "MissingMask":
        return cls(np.ones(n, bool), np.ones(n, bool), 0.0)


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray
    visual: np.ndarray
    tactile: np.ndarray
    visual_present: np.ndarray
    tactile_present: np.ndarray

    def __len__(self):
        return len(self.indices)


# ---------------------------------------------------------------------------
# file I/O


def _read_matrix(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            vals = []
            for j, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(str(path), i, j, cell) from None
            rows.append(vals)
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ParseError(str(path), i, len(r), f"<{len(r)} columns, expected {width}>")
    out = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        i, j = np.argwhere(~np.isfinite(out))[0]
        raise ParseError(str(path), int(i), int(j), str(out[i, j]))
    return out


def read_labels(path) -> np.ndarray:
    labels = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise ParseError(str(path), i, 0, line) from None
    return np.array(labels, dtype=np.int64)


def write_matrix(path, x: np.ndarray) -> None:
    # repr() gives the shortest string that round-trips a float64 exactly
    with open(path, "w", newline="") as fh:
        for row in np.asarray(x, dtype=np.float64):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_labels(path, labels) -> None:
    with open(path, "w") as fh:
        for v in labels:
            fh.write(f"{int(v)}\n")


def load_dataset(visual_path, tactile_path, labels_path, k: int | None = None) -> PairedDataset:
    """Load headerless CSV features and a one-integer-per-line label file.

    ``k`` defaults to ``max(label) + 1``.
    """
    visual = _read_matrix(visual_path)
    tactile = _read_matrix(tactile_path)
    labels = read_labels(labels_path)
    if visual.shape[0] != tactile.shape[0]:
        raise AlignmentError(f"visual has {visual.shape[0]} rows but tactile has {tactile.shape[0]}")
    if labels.shape[0] != visual.shape[0]:
        raise AlignmentError(f"{labels.shape[0]} labels for {visual.shape[0]} samples")
    if labels.size and labels.min() < 0:
        raise LabelError(f"negative label {labels.min()}")
    if k is None:
        k = int(labels.max()) + 1 if labels.size else 1
    return PairedDataset(visual, tactile, labels, k)


def save_dataset(dataset: PairedDataset, visual_path, tactile_path, labels_path) -> None:
    write_matrix(visual_path, dataset.visual)
    write_matrix(tactile_path, dataset.tactile)
    write_labels(labels_path, dataset.labels)


def write_mask(path, mask: MissingMask) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", "visual_present", "tactile_present"])
        for i, (v, t) in enumerate(zip(mask.visual_present, mask.tactile_present)):
            w.writerow([i, int(v), int(t)])


def read_mask(path, missing_rate: float | None = None) -> MissingMask:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    idx = np.array([int(r["sample_index"]) for r in rows])
    if not np.array_equal(idx, np.arange(len(rows))):
        raise ParseError(str(path), 0, 0, "sample_index must run 0..n-1 in order")
    vis = np.array([r["visual_present"] == "1" for r in rows])
    tac = np.array([r["tactile_present"] == "1" for r in rows])
    if missing_rate is None:
        missing_rate = ((~vis).sum() + (~tac).sum()) / (2 * len(rows)) if rows else 0.0
    return MissingMask(vis, tac, float(missing_rate))


# ---------------------------------------------------------------------------
# synthesis and masking


def synth_dataset(
    k: int,
    per_cluster: int,
    d1: int,
    d2: int,
    separation: float,
    modality_noise: float,
    seed: int,
    latent_dim: int = 8,
    view_rank: int | tuple[int, int] | None = None,
) -> PairedDataset:
    """Two heterogeneous views of one clustered latent code.

    Cluster means live in ``latent_dim`` dimensions and are rescaled so the
    closest pair sits exactly ``separation`` apart; each sample adds unit
    Gaussian spread around its mean. Each modality is a fixed random linear
    image of that shared code plus independent noise of std
    ``modality_noise``, followed by a modality-specific column scaling.

    With ``view_rank`` below ``latent_dim`` each map factors through a random
    ``view_rank``-dimensional projection, so each modality sees only part of
    the code and the two views carry complementary information. A pair
    ``(visual_rank, tactile_rank)`` sets the two views separately.
    """
    for name, v in (("k", k), ("per_cluster", per_cluster), ("d1", d1), ("d2", d2), ("latent_dim", latent_dim)):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be an integer >= 1, got {v}")
    if view_rank is None:
        ranks = (latent_dim, latent_dim)
    elif isinstance(view_rank, (tuple, list)):
        ranks = tuple(int(r) for r in view_rank)
    else:
        ranks = (int(view_rank), int(view_rank))
    if len(ranks) != 2 or not all(1 <= r <= latent_dim for r in ranks):
        raise ParameterError(f"view_rank must lie in 1..latent_dim, got {view_rank}")
    if not separation > 0:
        raise ParameterError(f"separation must be > 0, got {separation}")
    if not modality_noise >= 0:
        raise ParameterError(f"modality_noise must be >= 0, got {modality_noise}")
    rng = make_rng(seed, "synth")
    means = rng.standard_normal((k, latent_dim))
    if k > 1:
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        means *= separation / dist[~np.eye(k, dtype=bool)].min()
    labels = np.repeat(np.arange(k), per_cluster)
    codes = means[labels] + rng.standard_normal((labels.size, latent_dim))
    views = []
    for d, rank in zip((d1, d2), ranks):
        proj = rng.standard_normal((latent_dim, d)) / np.sqrt(latent_dim)
        if rank < latent_dim:
            basis = np.linalg.qr(rng.standard_normal((latent_dim, rank)))[0]
            proj = basis @ basis.T @ proj
        scale = np.exp(rng.uniform(-1.0, 1.0, size=d))
        views.append((codes @ proj + modality_noise * rng.standard_normal((labels.size, d))) * scale)
    return PairedDataset(views[0], views[1], labels, k)


def make_mask(n: int, missing_rate: float, seed: int) -> MissingMask:
    """Mask exactly floor(missing_rate * 2n) (sample, modality) slots.

    Sampling is uniform over all slot sets that leave every sample with at
    least one modality: pick that many distinct samples, then drop one of
    their two modalities at random.
    """
    if not 0.0 <= missing_rate <= 0.5:
        raise ParameterError(f"missing_rate must lie in [0, 0.5], got {missing_rate}")
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    count = int(np.floor(missing_rate * 2 * n + 1e-9))
    rng = make_rng(seed, "mask")
    chosen = rng.choice(n, size=count, replace=False)
    drop_visual = rng.random(count) < 0.5
    vis = np.ones(n, bool)
    tac = np.ones(n, bool)
    vis[chosen[drop_visual]] = False
    tac[chosen[~drop_visual]] = False
    return MissingMask(vis, tac, float(missing_rate))


def standardize(x: np.ndarray, present: np.ndarray) -> np.ndarray:
    """Z-score columns with statistics over present rows; absent rows become 0."""
    out = np.zeros_like(x, dtype=np.float64)
    if not present.any():
        return out
    rows = x[present]
    mu = rows.mean(axis=0)
    sd = rows.std(axis=0)
    sd[sd == 0] = 1.0
    out[present] = (rows - mu) / sd
    return out


def batches(dataset: PairedDataset, mask: MissingMask, batch_size: int, seed) -> Iterator[Batch]:
    """One shuffled epoch of batches; the last one may be short."""
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    if mask.n != dataset.n:
        raise AlignmentError(f"mask covers {mask.n} samples, dataset has {dataset.n}")
    order = make_rng(seed, "batches").permutation(dataset.n)
    for start in range(0, dataset.n, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(
            idx,
            dataset.visual[idx],
            dataset.tactile[idx],
            mask.visual_present[idx],
            mask.tactile_present[idx],
        )
