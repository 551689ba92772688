"""
CLI command: eval
"""

import logging
import sys
from pathlib import Path
from typing import List

import numpy as np

from .base import run, run_config_from_args
from .train import resolve_split
from ..core.checkpoint_manager import METADATA_FILE, CheckpointManager
from ..core.config_loader import ResolvedConfig
from ..core.enums import Command
from ..core.evaluation import evaluate_case, predict_label, write_metric_reports
from ..core.exceptions import ConfigError
from ..core.models import MetricReport
from ..core.network import DiffVNet
from ..core.trainer import evaluation_pairs

logger = logging.getLogger(__name__)


def locate_checkpoint(path: Path) -> Path:
    """
    Accept a checkpoint directory or a training output directory; the latter
    resolves to its ``best`` checkpoint, then ``last``.
    """
    path = Path(path)
    candidates = [path, path / "checkpoints" / "best", path / "checkpoints" / "last",
                  path / "best", path / "last"]
    for candidate in candidates:
        if (candidate / METADATA_FILE).is_file():
            return candidate
    return path


def evaluate(resolved: ResolvedConfig, out_dir: Path) -> List[MetricReport]:
    if resolved.checkpoint is None:
        raise ConfigError("Missing required field 'checkpoint' for eval", field="checkpoint")
    checkpoint_dir = locate_checkpoint(resolved.checkpoint)
    checkpoint = CheckpointManager.read_metadata(checkpoint_dir)
    trained = checkpoint.config
    num_classes = int(trained.get("num_classes", resolved.task.num_classes))
    feature_size = int(trained.get("feature_size", resolved.task.feature_size))
    patch = tuple(trained.get("patch_size", resolved.task.patch_size))

    model = DiffVNet(num_classes, feature_size)
    CheckpointManager.restore(model, checkpoint_dir)
    logger.info("Restored %s (iteration %d)", checkpoint_dir, checkpoint.iteration)

    split = resolve_split(resolved)
    if split.num_classes != num_classes:
        raise ConfigError("Evaluation data and checkpoint disagree on num_classes",
                          field="num_classes", value=split.num_classes,
                          context={"checkpoint": num_classes})
    pairs = evaluation_pairs(split, resolved.eval_domain)
    reports = []
    for i, (volume, label) in enumerate(pairs):
        pred = predict_label(model, volume, patch, resolved.task.overlap)
        reports.append(evaluate_case(pred, label, volume.spacing, case=f"case_{i:03d}"))
    csv_path, _ = write_metric_reports(reports, out_dir)

    mean_dice = float(np.nanmean([r.mean("dice") for r in reports]))
    print(f"✅ evaluated {len(reports)} volumes; mean foreground Dice {mean_dice:.4f}")
    print(f"   metrics: {csv_path}")
    return reports


def cmd_eval(args):
    """Evaluate a checkpoint with sliding-window inference"""
    sys.exit(run(run_config_from_args(Command.EVAL, args), {Command.EVAL: evaluate}))
