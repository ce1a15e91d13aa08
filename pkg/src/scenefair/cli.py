"""Command-line interface.

Subcommands mirror the pipeline stages plus `run` (all stages) and
`make-corpus` (bundled synthetic road-scene generator). Configuration is
read from a JSON file and individual flags override its fields.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, SceneFairError, StageError
from .pipeline import STAGES, PipelineConfig, run_pipeline
from .synthetic import CorpusSpec, make_corpus, write_corpus

STAGE_COMMANDS = {
    "ingest": "ingest",
    "cluster": "cluster",
    "learn-dist": "learn",
    "mutate": "mutate",
    "detect": "detect",
    "analyze": "analyze",
    "report": "report",
    "run": "report",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its fields")
    parser.add_argument("--dataset-dir")
    parser.add_argument("--output-dir")
    parser.add_argument("--cache-dir")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--k", help="number of clusters or 'auto'")
    parser.add_argument("--ops", help="comma-separated subset of insert,delete,rotate")
    parser.add_argument("--oracle", choices=["gt", "mt"], dest="oracle_mode")
    parser.add_argument("--err-type", choices=["inclusion", "exclusion"], dest="err_type")
    parser.add_argument(
        "--distribution-mode", choices=["ood", "id"], dest="distribution_mode"
    )
    parser.add_argument("--min-class-count", type=int, dest="min_class_count")
    parser.add_argument(
        "--filtering",
        choices=["on", "off"],
        help="prominence filter on error-rate classes",
    )
    parser.add_argument("--iterations", type=int)
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--subjects", help="JSON file holding the subject list")


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    data: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    overrides = {
        "dataset_dir": args.dataset_dir,
        "output_dir": args.output_dir,
        "cache_dir": args.cache_dir,
        "seed": args.seed,
        "oracle_mode": args.oracle_mode,
        "err_type": args.err_type,
        "distribution_mode": args.distribution_mode,
        "min_class_count": args.min_class_count,
        "iterations": args.iterations,
        "parallelism": args.parallelism,
    }
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if args.k is not None:
        data["k"] = args.k if args.k == "auto" else int(args.k)
    if args.ops is not None:
        data["ops"] = [op.strip() for op in args.ops.split(",") if op.strip()]
    if args.filtering is not None:
        data["filtering_enabled"] = args.filtering == "on"
    if args.subjects is not None:
        subjects_path = Path(args.subjects)
        if not subjects_path.exists():
            raise ConfigError(f"subjects file not found: {subjects_path}")
        data["subjects"] = json.loads(subjects_path.read_text())
    if "dataset_dir" not in data or "output_dir" not in data:
        raise ConfigError("dataset_dir and output_dir are required (flag or config)")
    return PipelineConfig.from_json(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenefair",
        description="Distribution-aware mutation testing of multi-label detectors",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in STAGE_COMMANDS:
        stage_parser = sub.add_parser(
            command,
            help=(
                "run all stages"
                if command == "run"
                else f"run the pipeline through the {STAGE_COMMANDS[command]} stage"
            ),
        )
        _add_config_flags(stage_parser)
    corpus = sub.add_parser("make-corpus", help="generate a synthetic road-scene corpus")
    corpus.add_argument("--out", required=True)
    corpus.add_argument("--scenes", type=int, default=24)
    corpus.add_argument("--seed", type=int, default=0)
    corpus.add_argument("--canvas", default="320x200", help="WIDTHxHEIGHT in pixels")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "make-corpus":
            try:
                width, height = (int(v) for v in args.canvas.lower().split("x"))
            except ValueError as exc:
                raise ConfigError(f"bad --canvas {args.canvas!r}") from exc
            dataset = make_corpus(args.scenes, args.seed, CorpusSpec(canvas=(width, height)))
            paths = write_corpus(dataset, args.out)
            print(f"wrote {len(paths)} scenes to {args.out}")
            return 0
        config = _config_from_args(args)
        result = run_pipeline(config, until=STAGE_COMMANDS[args.command])
        stages_done = [s for s in STAGES if result.manifest["stages"].get(s, {}).get("completed")]
        print(f"completed stages: {', '.join(stages_done)}")
        for path in result.report_paths:
            print(f"report: {path}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3
    except SceneFairError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
