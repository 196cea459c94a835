"""Clustering of partially observed visual-tactile data through fused latent
spaces and cross-modal conditional GANs."""

__version__ = "0.1.0"

from .data import MissingMask, PairedDataset, load_dataset, make_mask, synth_dataset
from .metrics import accuracy, nmi
from .trainer import TrainConfig, TrainReport, Trainer, run

__all__ = [
    "MissingMask",
    "PairedDataset",
    "TrainConfig",
    "TrainReport",
    "Trainer",
    "accuracy",
    "load_dataset",
    "make_mask",
    "nmi",
    "run",
    "synth_dataset",
]
