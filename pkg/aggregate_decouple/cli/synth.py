"""
CLI command: synth
"""

import logging
import sys
from pathlib import Path

from .base import run, run_config_from_args
from ..core.config_loader import ResolvedConfig
from ..core.data import make_synthetic, write_split
from ..core.enums import Command

logger = logging.getLogger(__name__)


def synthesize(resolved: ResolvedConfig, out_dir: Path) -> Path:
    """Generate the synthetic split of the resolved config and write it with a manifest"""
    split = make_synthetic(resolved.synthetic)
    manifest = write_split(split, out_dir, resolved.preprocess)
    print(f"✅ {len(split.labeled)} labeled, {len(split.unlabeled)} unlabeled, "
          f"{len(split.test)} test volumes")
    print(f"   manifest: {manifest}")
    return manifest


def cmd_synth(args):
    """Write a seeded synthetic dataset plus manifest"""
    sys.exit(run(run_config_from_args(Command.SYNTH, args), {Command.SYNTH: synthesize}))
