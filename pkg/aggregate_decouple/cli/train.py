"""
CLI command: train
"""

import logging
import sys
from pathlib import Path

from .base import run, run_config_from_args
from ..core.config_loader import ResolvedConfig
from ..core.data import load_split, make_synthetic
from ..core.enums import Command
from ..core.models import DatasetSplit
from ..core.trainer import FitResult, fit

logger = logging.getLogger(__name__)


def resolve_split(resolved: ResolvedConfig) -> DatasetSplit:
    """Manifest split when one is configured, otherwise the synthetic split"""
    if resolved.manifest is not None:
        return load_split(resolved.manifest)
    logger.info("No manifest configured; generating the synthetic split in memory")
    return make_synthetic(resolved.synthetic)


def train(resolved: ResolvedConfig, out_dir: Path) -> FitResult:
    split = resolve_split(resolved)
    result = fit(resolved.task, split, out_dir, rs_config=resolved.rs)
    print(f"✅ trained {resolved.task.max_iterations} iterations; best labeled Dice "
          f"{result.best_score:.4f} at iteration {result.best_iteration}")
    print(f"   checkpoints: {Path(out_dir) / 'checkpoints'}")
    return result


def cmd_train(args):
    """Train a model and write the training log plus checkpoints"""
    sys.exit(run(run_config_from_args(Command.TRAIN, args), {Command.TRAIN: train}))
