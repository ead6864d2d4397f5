"""Command-line entry point: ``pcrlb-design {design,bound,validate,oracle} --config FILE``."""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import structlog

from app.core.config import PRESET_ALIASES, PRESETS, parse_config
from app.core.errors import (
    EXIT_CONFIG,
    EXIT_OK,
    NumericalError,
    PcrlbError,
    exit_code_for,
)
from app.core.logging import configure_logging
from app.routers import artifact_meta, bound, design, oracle, validate
from app.services.export import write_diagnostic

log = structlog.get_logger(__name__)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="run config (key = value)")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--output-dir", type=Path, default=None, help="artifact directory")
    common.add_argument("--preset", choices=sorted({*PRESETS, *PRESET_ALIASES}), default=None)
    common.add_argument("--threads", type=int, default=None, help="worker threads")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcrlb-design",
        description="Bayesian input design with Markov-chain input policies and the PCRLB.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    parents = [_common_flags()]
    design.register(subparsers, parents)
    bound.register(subparsers, parents)
    validate.register(subparsers, parents)
    oracle.register(subparsers, parents)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    pairs = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "preset": args.preset,
        "threads": args.threads,
    }
    return {key: value for key, value in pairs.items() if value is not None}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    configure_logging(args.log_level)

    try:
        config = parse_config(args.config, _overrides(args))
    except PcrlbError as e:
        log.error("config.invalid", error=str(e))
        return EXIT_CONFIG

    try:
        written = args.handler(config)
    except NumericalError as e:
        log.error("run.numerical_failure", command=args.command, error=str(e), exc_info=True)
        write_diagnostic(config.output_dir / "diagnostic.txt", e, artifact_meta(config))
        return exit_code_for(e)
    except PcrlbError as e:
        log.error("run.failed", command=args.command, error=str(e))
        return exit_code_for(e)

    log.info("run.done", command=args.command, artifacts=[str(p) for p in written])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
