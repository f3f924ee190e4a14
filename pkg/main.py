"""
Blow-up Laboratory
Command-line entry point: python main.py <command> [--config PATH] [--out DIR] [--threads N] [--resume]
"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from config_io import load_config
from errors import LabError, ParameterError
from pipeline import COMMANDS, LabPipeline

logger = logging.getLogger("blowup_lab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blowup-lab",
        description="Numerical laboratory for blow-up of u_t = Δu + μ|∇u|^q + |u|^{p-1}u at the critical q = 2p/(p+1).",
    )
    parser.add_argument("command", choices=COMMANDS, help="what to run")
    parser.add_argument("--config", metavar="PATH", help="key=value config file (defaults apply when omitted)")
    parser.add_argument("--out", metavar="DIR", help="output directory (default runs/<command>_<config hash>)")
    parser.add_argument("--threads", type=int, default=None, metavar="N", help="worker processes for shots and stability rows")
    parser.add_argument("--resume", action="store_true", help="continue simulate/analyze from the last checkpoint")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_config(args.config)
    except LabError as e:
        logger.error(f"[{e.tag}] {e.message}")
        return e.exit_code
    except ValueError as e:
        logger.error(f"[{ParameterError.tag}] {e}")
        return ParameterError.exit_code

    threads = args.threads if args.threads is not None else config.options.threads
    resume = args.resume or config.options.resume
    out_dir = Path(args.out) if args.out else Path("runs") / f"{args.command}_{config.config_hash[:12]}"

    pipeline = LabPipeline(config, out_dir, threads=threads, resume=resume)
    return asyncio.run(pipeline.run_command(args.command))


if __name__ == "__main__":
    sys.exit(main())
