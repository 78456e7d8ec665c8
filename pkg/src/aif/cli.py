"""Command line entry point: ``aif <stage> --config <path> [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .pipeline import EXIT_SCHEMA, STAGES, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aif", description="Build and validate the investment activity index.")
    parser.add_argument("stage", choices=list(STAGES) + ["all"])
    parser.add_argument("--config", required=True, help="run configuration (JSON)")
    parser.add_argument("--seed", type=int, default=None, help="override rng_seed from the config")
    parser.add_argument("--out", default=None, help="override the output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("AIF_LOG", "INFO").upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        logging.getLogger("aif").error("cannot load config: %s", exc)
        return EXIT_SCHEMA
    if args.seed is not None:
        cfg.rng_seed = args.seed
    if args.out is not None:
        cfg.paths.output_dir = str(Path(args.out).resolve())
    return run_stage(args.stage, cfg)


if __name__ == "__main__":
    sys.exit(main())
