"""Command-line entry point: ``credfair <stage|run> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import apply_overrides, load_config
from .pipeline import STAGES, StageError, run_experiment


def _int_list(text: str) -> list[int]:
    text = text.strip()
    if text.lower() in ("", "none"):
        return []
    return [int(x) for x in text.split(",") if x.strip()]


def _str_list(text: str) -> list[str]:
    text = text.strip()
    if text.lower() in ("", "none"):
        return []
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--out", help="parent directory for run directories")
    common.add_argument("--seed", type=int, help="sets the split, search, in-context, mock and fairness seeds")
    common.add_argument("--backend", choices=("http", "mock", "replay"))
    common.add_argument("--mock-rule", help="always-good, always-bad, coin, coin(<n>) or checking-threshold")
    common.add_argument("--prompts", type=_int_list, help="comma-separated prompt indices, or 'none'")
    common.add_argument("--models", type=_str_list, help="comma-separated model names, or 'none'")
    common.add_argument("--test", choices=("bootstrap", "permutation"))
    common.add_argument("--cache", help="replay cache JSONL path")
    common.add_argument("--resume", action="store_true", help="continue an existing run directory")
    common.add_argument("--run-dir", help="run directory to create or resume (default: new, or latest with --resume)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="credfair", description="German Credit classical vs prompt-based scoring")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the pipeline through the {stage} stage")
    sub.add_parser("run", parents=[common], help="run every stage")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    until = "report" if args.command == "run" else args.command
    try:
        cfg = apply_overrides(load_config(args.config), out=args.out, seed=args.seed, backend=args.backend,
                              mock_rule=args.mock_rule, prompts=args.prompts, models=args.models,
                              test=args.test, cache=args.cache)
        artifacts = run_experiment(cfg, run_dir=args.run_dir, resume=args.resume, until=until)
    except (StageError, OSError, ValueError, RuntimeError) as exc:
        print(f"credfair: error: {exc}", file=sys.stderr)
        return 1
    print(artifacts.run_dir)
    if artifacts.complete:
        print((artifacts.run_dir / "accuracy.csv").read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
