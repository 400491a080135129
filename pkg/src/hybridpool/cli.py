"""Command-line interface.

Subcommands mirror the pipeline stages:

- pool         build and export per-topic pools and their splits
- narrate      generate (or reuse) per-topic relevance narratives
- judge        run the full human + automatic judging pipeline
- evaluate     score a judgement set against runs and a reference set
- grid         sweep several judging strategies and compare fidelity
- variability  re-judge repeatedly with fresh example draws
- serve        run the human review web service

Every subcommand takes --config (YAML or JSON) plus flag overrides; the
resolved configuration is archived in the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline, service
from .config import load_config
from .errors import HybridPoolError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML or JSON config file")
    parser.add_argument("--output-dir", dest="output_dir", help="artifact directory")
    parser.add_argument("--seed", type=int, help="experiment seed")
    parser.add_argument("--runs-dir", dest="runs_dir", help="directory of run files")
    parser.add_argument("--corpus", help="JSONL corpus path")
    parser.add_argument("--topics", help="tab-separated topics path")
    parser.add_argument("--gold-qrels", dest="gold_qrels", help="reference qrels path")
    parser.add_argument("--k", type=int, help="pool depth")
    parser.add_argument("--k-human", dest="k_human", type=int, help="human depth")
    parser.add_argument(
        "--human-mode", dest="human_mode", choices=("simulate", "service", "file"),
        help="source of the human-portion judgements",
    )
    parser.add_argument(
        "--human-selection", dest="human_selection", choices=("depth_k", "stratified"),
        help="how the human portion is chosen",
    )
    parser.add_argument(
        "--human-file", dest="human_file", help="human judgement log (file/service modes)"
    )
    parser.add_argument(
        "--backend", help="http, mock:faithful, mock:inverted, or mock:noisy:<p>"
    )
    parser.add_argument("--strategy", help="judging strategy, e.g. icl_relevant:2")
    parser.add_argument("--shots", type=int, help="number of in-context examples")
    parser.add_argument(
        "--narrative-variant", dest="narrative_variant",
        choices=("all_judged", "relevant_only", "nonrelevant_only", "human_trec"),
        help="evidence class for narrative generation",
    )
    parser.add_argument("--alpha", type=float, help="significance level")
    parser.add_argument("--metric", help="primary metric, e.g. ap@1000 or ndcg@10")
    parser.add_argument("--cache-dir", dest="cache_dir", help="completion cache directory")
    parser.add_argument(
        "--max-concurrency", dest="max_concurrency", type=int,
        help="maximum in-flight backend calls",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


_OVERRIDE_KEYS = (
    "output_dir", "seed", "runs_dir", "corpus", "topics", "gold_qrels",
    "k", "k_human", "human_mode", "human_selection", "human_file",
    "backend", "strategy", "shots", "narrative_variant", "alpha", "metric",
    "cache_dir", "max_concurrency",
)


def _config_from_args(args: argparse.Namespace):
    overrides = {key: getattr(args, key, None) for key in _OVERRIDE_KEYS}
    return load_config(args.config, overrides)


def _emit(payload: object) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hybridpool",
        description="hybrid human/automatic relevance judging toolkit",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    sub = subparsers.add_parser("pool", help="build and export pools")
    _add_common(sub)

    sub = subparsers.add_parser("narrate", help="generate relevance narratives")
    _add_common(sub)
    sub.add_argument(
        "--variants", nargs="+", default=None,
        help="narrative variants to generate (default: the configured one)",
    )

    sub = subparsers.add_parser("judge", help="run the judging pipeline")
    _add_common(sub)

    sub = subparsers.add_parser("evaluate", help="evaluate a judgement set")
    _add_common(sub)
    sub.add_argument(
        "--qrels-a", dest="qrels_a", default=None,
        help="reference judgements (defaults to gold_qrels; optional)",
    )
    sub.add_argument(
        "--qrels-b", dest="qrels_b", default=None,
        help="candidate judgements (defaults to the pipeline output)",
    )

    sub = subparsers.add_parser("grid", help="sweep judging strategies")
    _add_common(sub)
    sub.add_argument(
        "--strategies", nargs="+", required=True,
        help="strategy descriptors, e.g. zero_shot icl_relevant:2 rcl:relevant_only",
    )

    sub = subparsers.add_parser("variability", help="measure run-to-run spread")
    _add_common(sub)
    sub.add_argument(
        "--executions", type=int, default=10, help="number of repeat executions"
    )

    sub = subparsers.add_parser("serve", help="run the human review service")
    _add_common(sub)
    sub.add_argument("--host", default="127.0.0.1")
    sub.add_argument("--port", type=int, default=8080)
    sub.add_argument(
        "--lease-seconds", dest="lease_seconds", type=float,
        default=service.DEFAULT_LEASE_SECONDS,
        help="how long a handed-out task stays reserved",
    )
    sub.add_argument("--ui-dir", dest="ui_dir", default=None, help="static UI directory")

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _config_from_args(args)
        if args.command == "pool":
            _emit(pipeline.cmd_pool(config))
        elif args.command == "narrate":
            _emit(pipeline.cmd_narrate(config, variants=args.variants))
        elif args.command == "judge":
            _emit(pipeline.cmd_judge(config))
        elif args.command == "evaluate":
            records = pipeline.cmd_evaluate(
                config, qrels_b_path=args.qrels_b, qrels_a_path=args.qrels_a
            )
            print(pipeline.render_report(records))
        elif args.command == "grid":
            _emit(pipeline.cmd_grid(config, args.strategies))
        elif args.command == "variability":
            _emit(pipeline.cmd_variability(config, executions=args.executions))
        elif args.command == "serve":
            service.serve(
                config, host=args.host, port=args.port,
                lease_seconds=args.lease_seconds, ui_dir=args.ui_dir,
            )
    except HybridPoolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
