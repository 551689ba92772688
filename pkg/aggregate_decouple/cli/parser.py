"""
CLI parser setup.
"""

import argparse

from .synth import cmd_synth
from .train import cmd_train
from .evaluate import cmd_eval


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", required=True, help="Flat YAML run configuration")
    parser.add_argument("--out", "-o", required=True, help="Output directory (created if absent)")
    parser.add_argument("--seed", type=int, default=None, help="Seed, overrides the config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="Override one config key (repeatable)")


def setup_parser():
    parser = argparse.ArgumentParser(
        prog="ad-seg",
        description="Aggregate & Decouple semi-supervised volumetric segmentation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s synth --config desk.yaml --out runs/data
  %(prog)s train --config desk.yaml --out runs/train --set manifest=runs/data/manifest.txt
  %(prog)s eval  --config desk.yaml --out runs/eval --set checkpoint=runs/train
        """
    )

    subparsers = parser.add_subparsers(dest="command", help="Command")

    # synth
    synth_parser = subparsers.add_parser("synth", help="Write a synthetic dataset and manifest")
    _add_run_arguments(synth_parser)
    synth_parser.set_defaults(func=cmd_synth)

    # train
    train_parser = subparsers.add_parser("train", help="Train and write log plus checkpoints")
    _add_run_arguments(train_parser)
    train_parser.set_defaults(func=cmd_train)

    # eval
    eval_parser = subparsers.add_parser("eval", help="Evaluate a checkpoint over a manifest")
    _add_run_arguments(eval_parser)
    eval_parser.set_defaults(func=cmd_eval)

    return parser
