"""``triscale`` command line: ``reduce``, ``converge``, ``blowup``, ``normwatch``.

Exit status is 0 on success, 2 when a run completes but one of its
assertion flags fails, and 1 on configuration or numerical errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import TriscaleError
from .commands import COMMANDS
from .config import load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triscale", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", required=True, type=Path, help="YAML or JSON config")
        p.add_argument("--out", required=True, type=Path, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.command)
        result = COMMANDS[args.command](cfg, args.out)
    except TriscaleError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for f in result.files:
        print(f)
    if result.flags:
        print("assertion flags failed: " + ", ".join(result.flags), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
