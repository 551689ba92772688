"""
Base utilities for CLI commands: run-config plumbing, logging setup and the
command dispatcher.
"""

import logging
import sys
import traceback
from pathlib import Path
from typing import Callable, Dict, List, Optional

import torch

from ..core.config_loader import ResolvedConfig, parse_config
from ..core.enums import Command
from ..core.exceptions import TrainingError
from ..core.models import RunConfig

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
RUN_LOG = "run.log"
RESOLVED_FILE = "config.resolved"
PACKAGE_ROOT = Path(__file__).resolve().parent.parent

CommandHandler = Callable[[ResolvedConfig, Path], None]


def run_config_from_args(command: Command, args) -> RunConfig:
    return RunConfig(
        command=command,
        config_path=Path(args.config),
        output_dir=Path(args.out),
        seed=args.seed,
        overrides=list(args.overrides or []),
    )


def setup_logging(out_dir: Optional[Path], level: int = logging.INFO) -> List[logging.Handler]:
    """
    Attach a stderr handler and, when out_dir is given, a run.log file handler
    to the root logger. Handlers from an earlier call in the same process are
    replaced.
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_ad_seg", False):
            root.removeHandler(handler)
            handler.close()

    formatter = logging.Formatter(LOG_FORMAT)
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if out_dir is not None:
        handlers.append(logging.FileHandler(Path(out_dir) / RUN_LOG, encoding="utf-8"))
    for handler in handlers:
        handler.setFormatter(formatter)
        handler._ad_seg = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.setLevel(level)
    logging.captureWarnings(True)
    return handlers


def error_module(error: BaseException, default: str) -> str:
    """Name of the package module an error was raised in"""
    if isinstance(error, TrainingError) and error.module:
        return error.module
    module = default
    for frame in traceback.extract_tb(error.__traceback__):
        path = Path(frame.filename).resolve()
        if PACKAGE_ROOT in path.parents:
            module = path.stem
    return module


def run(cmd: RunConfig, handlers: Dict[Command, CommandHandler]) -> int:
    """
    Execute one command and return its exit status.

    The output directory is created first; the resolved configuration is
    written to ``config.resolved`` before the command body runs. Any failure
    is reported on stderr as ``<module>: <message>`` with status 1.
    """
    try:
        cmd.output_dir.mkdir(parents=True, exist_ok=True)
        setup_logging(cmd.output_dir)
        resolved = parse_config(cmd.config_path, cmd.overrides, cmd.seed)
        resolved.write(cmd.output_dir / RESOLVED_FILE)
        torch.set_num_threads(resolved.task.torch_threads)
        logger.info("%s: preset %s, output %s", cmd.command.value, resolved.preset,
                    cmd.output_dir)
        handlers[cmd.command](resolved, cmd.output_dir)
    except Exception as e:
        message = " ".join(str(e).split()) or type(e).__name__
        print(f"{error_module(e, cmd.command.value)}: {message}", file=sys.stderr)
        logger.debug("Command failed", exc_info=True)
        return 1
    return 0
