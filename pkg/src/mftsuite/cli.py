"""Command-line entry point: one subcommand per pipeline stage.

All stages share one YAML config; --mode and --transcript can override the
record/replay settings per invocation, and any stage can be rerun in
isolation because it reads prior-stage artifacts from disk.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ConfigError, PipelineConfig, dump_config, validate_config
from .embedding import ProviderError
from .llm_gateway import TranscriptMiss
from .pipeline import StageError

log = logging.getLogger(__name__)

STAGES = {
    "ingest": pipeline.run_ingest,
    "embed": pipeline.run_embed,
    "cluster": pipeline.run_cluster,
    "represent": pipeline.run_represent,
    "generate": pipeline.run_generate,
    "qc-label": pipeline.run_qc_label,
    "triage-apply": pipeline.run_triage_apply,
    "assemble": pipeline.run_assemble,
    "mft-topics": pipeline.run_mft_topics,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mftsuite",
        description="Generate and score behavioral MFT suites for text classifiers.")
    parser.add_argument("--machine", action="store_true",
                        help="emit errors as single-line JSON on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="pipeline config YAML")
        p.add_argument("--mode", choices=("live", "record", "replay"),
                       help="override the gateway mode")
        p.add_argument("--transcript", help="override the transcript path")
        p.add_argument("--split", choices=("train", "validation", "test"),
                       help="override the corpus split")
        p.add_argument("--force", action="store_true",
                       help="rerun even if the stage is up to date")

    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        add_common(p)
        if name == "represent":
            p.add_argument("--cluster", type=int, default=None,
                           help="select representatives for one cluster only")

    p = sub.add_parser("evaluate", help="score predictions against suite variants")
    add_common(p)
    p.add_argument("--predictions", help="directory with predictions_<variant>.csv")
    p.add_argument("--model-name", default="model")
    p.add_argument("--allow-partial", action="store_true",
                   help="tolerate incomplete prediction coverage")

    p = sub.add_parser("report", help="render the evaluation report and figures")
    add_common(p)
    p.add_argument("--model-name", default="model")

    p = sub.add_parser("run-all", help="run every stage in order")
    add_common(p)
    p.add_argument("--predictions", help="directory with predictions_<variant>.csv")
    p.add_argument("--model-name", default="model")

    p = sub.add_parser("validate-config", help="check a config file and echo "
                                               "the normalized result")
    p.add_argument("--config", required=True)
    return parser


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    overrides: dict = {}
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if getattr(args, "transcript", None):
        overrides.setdefault("paths", {})["transcript"] = args.transcript
    if getattr(args, "split", None):
        overrides.setdefault("params", {})["split"] = args.split
    return validate_config(args.config, overrides=overrides)


def _fail(message: str, machine: bool, code: int = 1,
          stage: str | None = None) -> int:
    if machine:
        payload = {"error": message}
        if stage:
            payload["stage"] = stage
        print(json.dumps(payload, ensure_ascii=False), file=sys.stderr)
    else:
        print(f"error: {message}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    machine = args.machine

    if args.command == "validate-config":
        try:
            cfg = validate_config(args.config)
        except ConfigError as exc:
            for err in exc.errors:
                print(f"config error: {err}", file=sys.stderr)
            if machine:
                print(json.dumps({"error": "invalid config",
                                  "violations": exc.errors}), file=sys.stderr)
            return 2
        print(dump_config(cfg), end="")
        return 0

    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        return _fail(f"invalid config: {exc}", machine, code=2)

    try:
        with pipeline.pipeline_lock(cfg.paths.workdir):
            if args.command == "evaluate":
                result = pipeline.run_evaluate(
                    cfg, predictions_dir=args.predictions,
                    model_name=args.model_name,
                    allow_partial=args.allow_partial, force=args.force)
            elif args.command == "report":
                result = pipeline.run_report(cfg, model_name=args.model_name,
                                             force=args.force)
            elif args.command == "run-all":
                result = pipeline.run_all(cfg, predictions_dir=args.predictions,
                                          model_name=args.model_name,
                                          force=args.force)
            elif args.command == "represent":
                result = pipeline.run_represent(cfg, force=args.force,
                                                only_cluster=args.cluster)
            else:
                result = STAGES[args.command](cfg, args.force)
    except (StageError, TranscriptMiss, ProviderError, FileNotFoundError,
            ValueError, RuntimeError) as exc:
        return _fail(str(exc), machine, stage=args.command)

    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
