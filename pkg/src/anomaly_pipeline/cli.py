"""Command-line entry point: run pipeline stages against a config file.

    anomaly-pipeline all --config scenario.json --out runs/demo
    anomaly-pipeline label --config scenario.json --out runs/demo --labels ano

Set ANOMALY_PIPELINE_LOG=DEBUG|INFO|WARNING to control verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .pipeline import STAGE_ORDER, PipelineConfig, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anomaly-pipeline",
        description="Early traffic anomaly detection pipeline over probe speed data",
    )
    parser.add_argument("stage", choices=STAGE_ORDER + ["all"], help="pipeline stage to run")
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("--out", type=Path, required=True, help="output directory for all artifacts")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--segment", default=None, help="restrict modelling to one target segment")
    parser.add_argument("--labels", choices=["ano", "aan"], default=None,
                        help="train and evaluate against plain (ano) or ahead (aan) labels")
    parser.add_argument("--lookback", type=int, default=None, help="input window length in slots")
    parser.add_argument("--horizon", type=int, default=None, help="prediction horizon in slots")
    parser.add_argument("--stride", type=int, default=None, help="anchor stride in slots")
    parser.add_argument("--study-start", default=None, help="daily study window start, HH:MM")
    parser.add_argument("--study-end", default=None, help="daily study window end, HH:MM")
    parser.add_argument("--weekdays-only", dest="weekdays_only", action="store_true", default=None)
    parser.add_argument("--all-days", dest="weekdays_only", action="store_false", default=None)
    parser.add_argument("--dump-features", action="store_true", default=None,
                        help="also write the per-channel feature CSV dump")
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides = {
        "seed": args.seed,
        "segment": args.segment,
        "labels": args.labels,
        "lookback": args.lookback,
        "horizon": args.horizon,
        "stride": args.stride,
        "study_start": args.study_start,
        "study_end": args.study_end,
        "weekdays_only": args.weekdays_only,
        "dump_features": args.dump_features,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("ANOMALY_PIPELINE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        run(args.stage, cfg, args.out)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
