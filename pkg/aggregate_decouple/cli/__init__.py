"""
Command-line interface: ``ad-seg synth | train | eval``.
"""

import sys
from typing import List, Optional

from .parser import setup_parser


def main(argv: Optional[List[str]] = None) -> None:
    parser = setup_parser()
    args = parser.parse_args(argv)

    handler = getattr(args, "func", None)
    if handler is None:
        parser.print_help(sys.stderr)
        sys.exit(1)
    handler(args)
