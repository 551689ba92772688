"""
Core segmentation modules.
Following SOLID principles - modules are organized by responsibility.
"""

# Exceptions
from .exceptions import (
    ValidationError, InvalidLabelError, ShapeMismatchError, DegenerateInputError,
    CapacityError, ConfigError, LayoutMismatchError, CheckpointError, TrainingError
)

# Enums
from .enums import TaskKind, ProbKind, NormalizeMode, OpKind, AugName, SampleRole, Command

# Models
from .models import (
    Volume, LabelMap, OneHot, ProbMap, DatasetSplit, PreprocessSpec, SyntheticSpec,
    TaskConfig, RSConfig, LossReport, ClassMetrics, MetricReport, RunConfig
)

# Conversions and data
from .tensors import one_hot_encode, argmax_decode, one_hot_tensor
from .data import preprocess, preprocess_pair, stack_depth, make_synthetic, load_split, write_split

# Model components
from .svda import AugmentationOp, OPERATIONS, sample_ops, apply, augment
from .diffusion import NoiseSchedule, make_schedule, forward_diffuse, ddim_step, ddim_generate
from .network import DiffVNet, FeaturePyramid, ema_distill
from .drs import DifficultyState
from .rs import gumbel_softmax, gaussian_blur3d, ensemble
from .objectives import dice_ce, l_deno, l_diff, l_u, ramp_weight

# Training and evaluation
from .trainer import init_state, train_step, fit, poly_lr, run_ablation
from .evaluation import dice_score, surface_distances, sliding_window_infer, evaluate_case
from .checkpoint_manager import CheckpointManager, Checkpoint

# Configuration
from .schema_loader import SchemaLoader
from .config_loader import ConfigLoader, ResolvedConfig, parse_config

__all__ = [
    "ValidationError", "InvalidLabelError", "ShapeMismatchError", "DegenerateInputError",
    "CapacityError", "ConfigError", "LayoutMismatchError", "CheckpointError", "TrainingError",
    "TaskKind", "ProbKind", "NormalizeMode", "OpKind", "AugName", "SampleRole", "Command",
    "Volume", "LabelMap", "OneHot", "ProbMap", "DatasetSplit", "PreprocessSpec",
    "SyntheticSpec", "TaskConfig", "RSConfig", "LossReport", "ClassMetrics", "MetricReport",
    "RunConfig",
    "one_hot_encode", "argmax_decode", "one_hot_tensor",
    "preprocess", "preprocess_pair", "stack_depth", "make_synthetic", "load_split", "write_split",
    "AugmentationOp", "OPERATIONS", "sample_ops", "apply", "augment",
    "NoiseSchedule", "make_schedule", "forward_diffuse", "ddim_step", "ddim_generate",
    "DiffVNet", "FeaturePyramid", "ema_distill",
    "DifficultyState",
    "gumbel_softmax", "gaussian_blur3d", "ensemble",
    "dice_ce", "l_deno", "l_diff", "l_u", "ramp_weight",
    "init_state", "train_step", "fit", "poly_lr", "run_ablation",
    "dice_score", "surface_distances", "sliding_window_infer", "evaluate_case",
    "CheckpointManager", "Checkpoint",
    "SchemaLoader", "ConfigLoader", "ResolvedConfig", "parse_config",
]
