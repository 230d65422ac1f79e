"""Asymmetric weakly supervised segmentation from aspect-ratio annotations."""

from .geometry import AspectAnnotation, ShapeKind, generate_pseudo_label, annotation_from_mask
from .metrics import evaluate_pair, overlap_metrics, surface_metrics
from .synthdata import SynthConfig, make_dataset, read_dataset, write_dataset
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AspectAnnotation", "ShapeKind", "generate_pseudo_label", "annotation_from_mask",
    "evaluate_pair", "overlap_metrics", "surface_metrics",
    "SynthConfig", "make_dataset", "read_dataset", "write_dataset",
    "TrainConfig", "evaluate", "train",
]
