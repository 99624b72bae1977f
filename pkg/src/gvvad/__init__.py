"""Weakly supervised anomaly detection over clip-feature sequences.

The package covers the full desk-scale pipeline: compiling description
repositories, simulating feature datasets with a controllable real/synthetic
domain gap, mixing real and synthetic pools, top-k multiple-instance
training with synthetic-sample loss scaling, frame-level ROC-AUC evaluation,
and ablation sweeps.
"""

from .datamodel import MixedDataset, VideoSample, mix_datasets, subsample_real
from .evaluation import AblationSpec, evaluate, roc_auc, run_ablation
from .milcore import ScorerParams, TrainConfig, gradient_check, train
from .promptgen import ElementInventory, build_repository, default_inventory
from .worldsim import GenerationCounts, WorldConfig, generate_dataset, generate_video

__version__ = "0.1.0"

__all__ = [
    "AblationSpec",
    "ElementInventory",
    "GenerationCounts",
    "MixedDataset",
    "ScorerParams",
    "TrainConfig",
    "VideoSample",
    "WorldConfig",
    "build_repository",
    "default_inventory",
    "evaluate",
    "generate_dataset",
    "generate_video",
    "gradient_check",
    "mix_datasets",
    "roc_auc",
    "run_ablation",
    "subsample_real",
    "train",
]
