"""Toy-scale medical image segmentation with a fuzzy-entropy loss.

The package bundles a fuzzy c-means clustering engine, a small reverse-mode
autodiff network engine with U-shaped segmentation models, a synthetic
phantom generator, and a training harness that compares plain categorical
cross-entropy against its fuzzy-entropy-regularized variant.
"""

from . import fcm, losses, metrics
from .config import RunConfig, make_run_config
from .dataset import Dataset, build_dataset, load_dataset, save_dataset, split_dataset
from .errors import (
    CheckpointError,
    ConfigurationError,
    DegenerateClusterError,
    InvalidInputError,
    NumericFailureError,
    PgmParseError,
    ShapeError,
)
from .models import UNet, UNetPP, UNetSpec, build_unet, build_unetpp, forward_segment
from .phantoms import LabeledImage, PhantomConfig, generate_batch, generate_phantom
from .train import evaluate_checkpoint, run_ablation, train_run

__version__ = "0.1.0"

__all__ = [
    "fcm", "losses", "metrics",
    "RunConfig", "make_run_config",
    "Dataset", "build_dataset", "load_dataset", "save_dataset", "split_dataset",
    "CheckpointError", "ConfigurationError", "DegenerateClusterError",
    "InvalidInputError", "NumericFailureError", "PgmParseError", "ShapeError",
    "UNet", "UNetPP", "UNetSpec", "build_unet", "build_unetpp", "forward_segment",
    "LabeledImage", "PhantomConfig", "generate_batch", "generate_phantom",
    "evaluate_checkpoint", "run_ablation", "train_run",
    "__version__",
]
