"""
Aggregate & Decouple

Semi-supervised volumetric segmentation with one shared diffusion encoder and
three decoupled decoders, covering SSL, class-imbalanced SSL, UDA and SemiDG.
"""

from .core import (
    TaskConfig,
    RSConfig,
    PreprocessSpec,
    SyntheticSpec,
    DatasetSplit,
    DiffVNet,
    make_synthetic,
    load_split,
    fit,
    sliding_window_infer,
    evaluate_case,
    parse_config,
    ValidationError,
    TrainingError,
)

__version__ = "0.1.0"
__all__ = [
    "TaskConfig",
    "RSConfig",
    "PreprocessSpec",
    "SyntheticSpec",
    "DatasetSplit",
    "DiffVNet",
    "make_synthetic",
    "load_split",
    "fit",
    "sliding_window_infer",
    "evaluate_case",
    "parse_config",
    "ValidationError",
    "TrainingError",
]
