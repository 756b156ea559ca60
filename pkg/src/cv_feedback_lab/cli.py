"""Command-line entry point.

Usage::

    cvfl <scenario> [--config FILE] [--seed S] [--out DIR] [--parallel N]

Config precedence: CLI flags override file keys, which override defaults; the
effective configuration is echoed into the summary for auditability.  Exit
codes: 0 success, 1 built-in check failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import build_params, load_config
from .errors import ConfigurationError, ParameterError
from .scenarios import SCENARIOS, run_named

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvfl", description="Feedback-controlled oscillator scenarios")
    parser.add_argument("scenario", help=f"one of: {', '.join(SCENARIOS)}")
    parser.add_argument("--config", type=Path, default=None, help="flat key=value configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the RNG seed")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--parallel", type=int, default=None, help="fan out independent cells over N processes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config is not None else {}
        osc, meas, fb, settings = build_params(cfg)
        if args.seed is not None:
            settings = replace(settings, seed=args.seed)
        summary = run_named(
            args.scenario,
            args.out,
            settings,
            osc=osc,
            meas=meas,
            fb=fb,
            parallel=args.parallel,
        )
    except (ConfigurationError, ParameterError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    status = "PASS" if summary["passed"] else "FAIL"
    for check in summary["checks"]:
        mark = "ok" if check["passed"] else "FAILED"
        print(f"[{mark:>6}] {check['name']} = {check['value']}")
    print(f"{status}: {args.scenario} (seed {summary['seed']}, {summary['wall_time_s']} s) -> {args.out}/summary.json")
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
