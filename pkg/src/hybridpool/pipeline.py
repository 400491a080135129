"""End-to-end experiment stages behind the command-line interface.

Stage order for a full experiment: build per-topic pools from the runs and
split them into a human portion and an automatic portion; collect the human
judgements (simulated from a reference, read from a file, or gathered with
the review service); judge the remainder with the configured strategy and
backend; merge into one hybrid judgement set; evaluate that set against the
reference.  Every stage writes its artifacts under the configured output
directory and is deterministic for a fixed configuration and seed, so an
interrupted experiment can be rerun and completes with byte-identical
outputs.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from . import assessor, pooling, significance
from .config import ExperimentConfig, parse_metric
from .errors import ConfigError, HybridPoolError
from .gateway import Gateway, HttpChatBackend, mock_oracle
from .metrics import ConfusionMatrix, mcc, per_query_f1, topic_scores
from .rng import derive_key
from .trec_io import (
    Corpus,
    Qrels,
    RunSet,
    TopicSet,
    load_runs_dir,
    parse_corpus,
    parse_qrels,
    parse_topics,
    write_qrels,
)

logger = logging.getLogger(__name__)

POOLS_DIR = "pools"
HUMAN_QRELS_NAME = "human.qrels"
HYBRID_QRELS_NAME = "hybrid.qrels"
PROVENANCE_SUFFIX = ".provenance.jsonl"
JUDGEMENT_LOG_NAME = "judgement_log.jsonl"
NARRATIVES_NAME = "narratives.jsonl"
HUMAN_SERVICE_LOG_NAME = "human_judgements.jsonl"
CONFIG_SNAPSHOT_NAME = "config_resolved.json"
REPORT_JSONL_NAME = "report.jsonl"
REPORT_TEXT_NAME = "report.txt"


@dataclass
class Collection:
    runset: RunSet
    topics: TopicSet
    corpus: Corpus
    gold: Qrels | None


def load_collection(config: ExperimentConfig) -> Collection:
    runs_dir = Path(config.runs_dir)
    if not runs_dir.is_dir():
        raise ConfigError(f"runs_dir {runs_dir} is not a directory")
    run_paths = sorted(str(p) for p in runs_dir.iterdir() if p.is_file())
    if not run_paths:
        raise ConfigError(f"runs_dir {runs_dir} contains no run files")
    runset = load_runs_dir(run_paths)
    with open(config.topics, encoding="utf-8") as fh:
        topics = parse_topics(fh)
    with open(config.corpus, encoding="utf-8") as fh:
        corpus = parse_corpus(fh, max_doc_chars=config.max_doc_chars)
    gold = None
    if config.gold_qrels is not None:
        with open(config.gold_qrels, encoding="utf-8") as fh:
            gold = parse_qrels(fh, source="gold")
    return Collection(runset=runset, topics=topics, corpus=corpus, gold=gold)


def build_gateway(config: ExperimentConfig, gold: Qrels | None) -> Gateway:
    if config.backend == "http":
        backend = HttpChatBackend(
            base_url=config.base_url or "",
            model=config.model or "",
            timeout_s=config.request_timeout_s,
            retries=config.retries,
            constraint_key=config.constraint_key,
        )
    else:
        fields = config.backend.split(":")
        mode = fields[1] if len(fields) > 1 else ""
        if gold is None:
            raise ConfigError("mock backends need gold_qrels to answer from")
        flip = 0.0
        if mode == "noisy":
            if len(fields) < 3:
                raise ConfigError("mock:noisy needs a flip probability, e.g. mock:noisy:0.1")
            try:
                flip = float(fields[2])
            except ValueError:
                raise ConfigError(f"bad flip probability in {config.backend!r}") from None
        backend = mock_oracle(
            gold, mode, flip_probability=flip, seed=config.seed,
            relevance_threshold=config.relevance_threshold,
        )
    return Gateway(
        backend,
        cache_dir=config.resolved_cache_dir(),
        max_concurrency=config.max_concurrency,
    )


@dataclass
class PoolStage:
    pools: dict[str, pooling.Pool]
    splits: dict[str, pooling.PoolSplit]
    human_pairs: list[tuple[str, str]]
    llm_pairs: list[tuple[str, str]]
    notes: list[str]


def pool_stage(config: ExperimentConfig, collection: Collection) -> PoolStage:
    """Build and split every topic's pool; assign the human portion.

    Topics present in only one of (topics file, runs) are skipped with a
    note.  With human_selection=stratified the human portion is a
    reference-stratified random sample of the whole pool instead of the
    shallow depth slice, and the automatic portion is the remainder.
    """
    notes: list[str] = []
    run_topics = set(collection.runset.topics())
    topic_ids = sorted(set(collection.topics.ids()) & run_topics)
    for missing in sorted(set(collection.topics.ids()) - run_topics):
        notes.append(f"topic {missing} has no retrieved documents; skipped")
    for missing in sorted(run_topics - set(collection.topics.ids())):
        notes.append(f"topic {missing} retrieved but absent from the topics file; skipped")
    if not topic_ids:
        raise ConfigError("no topics shared between the topics file and the runs")

    pools: dict[str, pooling.Pool] = {}
    splits: dict[str, pooling.PoolSplit] = {}
    human_pairs: list[tuple[str, str]] = []
    llm_pairs: list[tuple[str, str]] = []
    for topic_id in topic_ids:
        pool = pooling.create_pool(collection.runset, topic_id, config.k)
        if config.human_selection == "stratified":
            assert collection.gold is not None  # validated by the config
            sampled = pooling.stratified_sample(
                pool, collection.gold, config.stratified_fraction, config.seed,
                config.relevance_threshold,
            )
            split = pooling.PoolSplit(
                topic_id=topic_id,
                k_human=config.k_human,
                shallow=frozenset(sampled),
                deep=frozenset(set(pool.members) - sampled),
            )
        else:
            split = pooling.split_pool(pool, config.k_human)
        pools[topic_id] = pool
        splits[topic_id] = split
        human_pairs.extend((topic_id, d) for d in sorted(split.shallow))
        llm_pairs.extend((topic_id, d) for d in sorted(split.deep))
    return PoolStage(
        pools=pools, splits=splits, human_pairs=human_pairs,
        llm_pairs=llm_pairs, notes=notes,
    )


def write_pool_files(stage: PoolStage, output_dir: str | Path) -> list[Path]:
    pools_dir = Path(output_dir) / POOLS_DIR
    pools_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for topic_id in sorted(stage.pools):
        path = pools_dir / f"{topic_id}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            pooling.export_pool(stage.pools[topic_id], stage.splits[topic_id], fh)
        written.append(path)
    return written


def _read_human_log(path: str | Path, human_pairs: Iterable[tuple[str, str]]) -> Qrels:
    """Binary qrels from a human judgement log, last record per pair wins."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"human judgement log {path} does not exist")
    labels: dict[tuple[str, str], int] = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = assessor.JudgementRecord.from_json(line)
            labels[(record.topic_id, record.doc_id)] = record.label
    wanted = sorted(set(human_pairs))
    missing = [pair for pair in wanted if pair not in labels]
    if missing:
        preview = ", ".join(f"{t}/{d}" for t, d in missing[:5])
        raise ConfigError(
            f"human judgement log {path} is missing {len(missing)} of "
            f"{len(wanted)} assigned pairs (e.g. {preview})"
        )
    qrels = Qrels()
    for topic_id, doc_id in wanted:
        qrels.add(topic_id, doc_id, labels[(topic_id, doc_id)], "human")
    return qrels


def human_stage(
    config: ExperimentConfig, collection: Collection, stage: PoolStage
) -> tuple[Qrels, list[str]]:
    """Collect the human-portion judgements per the configured mode."""
    notes: list[str] = []
    if config.human_mode == "simulate":
        assert collection.gold is not None  # validated by the config
        judged = pooling.simulate_human_judge(stage.human_pairs, collection.gold)
        if judged.assumed_nonrelevant:
            notes.append(
                f"{len(judged.assumed_nonrelevant)} human-portion pairs were "
                "absent from the reference and assumed non-relevant"
            )
        return judged.qrels, notes
    if config.human_mode == "file":
        path = Path(config.human_file)  # validated non-None by the config
    else:  # service: read the log the review service appends to
        path = (
            Path(config.human_file)
            if config.human_file is not None
            else Path(config.output_dir) / HUMAN_SERVICE_LOG_NAME
        )
    return _read_human_log(path, stage.human_pairs), notes


def write_qrels_with_provenance(qrels: Qrels, path: str | Path) -> None:
    """Write a qrels file plus a provenance sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        write_qrels(qrels, fh)
    sidecar = path.with_name(path.name + PROVENANCE_SUFFIX)
    with sidecar.open("w", encoding="utf-8") as fh:
        for topic_id, doc_id in sorted(qrels.grades):
            fh.write(
                json.dumps(
                    {
                        "topic_id": topic_id,
                        "doc_id": doc_id,
                        "grade": qrels.grades[(topic_id, doc_id)],
                        "provenance": qrels.provenance[(topic_id, doc_id)],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_qrels_with_provenance(path: str | Path) -> Qrels:
    """Read a qrels file, restoring provenance from its sidecar if present."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        qrels = parse_qrels(fh, source="gold")
    sidecar = path.with_name(path.name + PROVENANCE_SUFFIX)
    if sidecar.exists():
        with sidecar.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                key = (record["topic_id"], record["doc_id"])
                if key in qrels.grades:
                    qrels.provenance[key] = record["provenance"]
    return qrels


def cmd_pool(config: ExperimentConfig) -> dict:
    """Build, split, and export every topic's pool."""
    collection = load_collection(config)
    stage = pool_stage(config, collection)
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    config.snapshot(output_dir / CONFIG_SNAPSHOT_NAME)
    written = write_pool_files(stage, output_dir)
    return {
        "topics": len(stage.pools),
        "pool_files": [str(p) for p in written],
        "pool_size_total": sum(len(p) for p in stage.pools.values()),
        "human_pairs": len(stage.human_pairs),
        "llm_pairs": len(stage.llm_pairs),
        "notes": stage.notes,
    }


def cmd_narrate(config: ExperimentConfig, variants: list[str] | None = None) -> dict:
    """Generate (or reuse) relevance narratives for every pooled topic.

    Per-topic failures (no evidence for the variant, malformed instructor
    replies) are collected rather than aborting the batch.
    """
    collection = load_collection(config)
    stage = pool_stage(config, collection)
    human_qrels, notes = human_stage(config, collection, stage)
    gateway = build_gateway(config, collection.gold)
    templates = assessor.TemplateSet.load(config.templates_dir)
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    config.snapshot(output_dir / CONFIG_SNAPSHOT_NAME)
    store = assessor.NarrativeStore(output_dir / NARRATIVES_NAME)
    wanted = variants or [config.narrative_variant]
    generated, reused, failures = 0, 0, []
    for topic_id in sorted(stage.pools):
        for variant in wanted:
            if store.get(topic_id, variant) is not None:
                reused += 1
                continue
            try:
                evidence = assessor._evidence_for_topic(
                    human_qrels, collection.corpus, topic_id, config.relevance_threshold
                )
                record = assessor.generate_narrative(
                    gateway, templates, collection.topics[topic_id], variant,
                    evidence, budget=config.context_budget,
                )
            except HybridPoolError as exc:
                failures.append(f"{topic_id}/{variant}: {exc}")
                continue
            store.put(record)
            generated += 1
    return {
        "topics": len(stage.pools),
        "variants": wanted,
        "generated": generated,
        "reused": reused,
        "failures": failures,
        "store": str(store.path),
        "notes": notes,
    }


def cmd_judge(config: ExperimentConfig) -> dict:
    """Run the full pooling + human + automatic judging pipeline."""
    collection = load_collection(config)
    stage = pool_stage(config, collection)
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    config.snapshot(output_dir / CONFIG_SNAPSHOT_NAME)
    write_pool_files(stage, output_dir)

    human_qrels, notes = human_stage(config, collection, stage)
    write_qrels_with_provenance(human_qrels, output_dir / HUMAN_QRELS_NAME)

    gateway = build_gateway(config, collection.gold)
    templates = assessor.TemplateSet.load(config.templates_dir)
    strategy = config.parsed_strategy()
    store = assessor.NarrativeStore(output_dir / NARRATIVES_NAME)
    log = assessor.JudgementLog(output_dir / JUDGEMENT_LOG_NAME)
    already_logged = len(log)
    records = assessor.judge_pairs(
        gateway, templates, strategy, stage.llm_pairs,
        collection.topics, collection.corpus, human_qrels,
        seed=config.seed, narrative_store=store, log=log,
        context_budget=config.context_budget,
        fixed_examples_per_topic=config.fixed_examples_per_topic,
        relevance_threshold=config.relevance_threshold,
    )
    llm_qrels = assessor.records_to_qrels(records)
    hybrid = assessor.merge_qrels(human_qrels, llm_qrels)
    write_qrels_with_provenance(hybrid, output_dir / HYBRID_QRELS_NAME)

    flag_counts: dict[str, int] = {}
    for record in records:
        for flag in record.flags:
            flag_counts[flag] = flag_counts.get(flag, 0) + 1
    return {
        "strategy": strategy.descriptor(),
        "topics": len(stage.pools),
        "human_pairs": len(stage.human_pairs),
        "llm_pairs": len(records),
        "resumed_pairs": already_logged,
        "flag_counts": dict(sorted(flag_counts.items())),
        "hybrid_qrels": str(output_dir / HYBRID_QRELS_NAME),
        "judgement_log": str(output_dir / JUDGEMENT_LOG_NAME),
        "notes": notes,
    }


def _llm_universe(qrels: Qrels) -> tuple[list[tuple[str, str]], list[str]]:
    """Pairs to score automatic-judging fidelity on, with notes.

    Uses provenance when any pair carries an llm tag, otherwise falls back
    to every judged pair (flagging that human-judged pairs are included).
    """
    llm_pairs = sorted(k for k, v in qrels.provenance.items() if v == "llm")
    if llm_pairs:
        return llm_pairs, []
    return sorted(qrels.grades), [
        "no provenance sidecar found: fidelity measured over all judged pairs"
    ]


def evaluate_qrels(
    config: ExperimentConfig,
    runset: RunSet,
    qrels_b: Qrels,
    qrels_a: Qrels | None,
) -> list[dict]:
    """Produce the evaluation records for a candidate judgement set.

    Retrieval effectiveness per run under both judgement sets, significance
    decision matrices, fidelity of the automatic judgements against the
    reference, and the decision-preservation score.  Without a reference
    set, only the candidate-side sections are produced.
    """
    metric_name, cutoff = parse_metric(config.metric)
    records: list[dict] = []
    sides: list[tuple[str, Qrels]] = [("b", qrels_b)]
    if qrels_a is not None:
        sides.insert(0, ("a", qrels_a))

    descriptors = list(dict.fromkeys(["ap@1000", "ndcg@10", config.metric]))
    for side, qrels in sides:
        for descriptor in descriptors:
            name, metric_cutoff = parse_metric(descriptor)
            scores = topic_scores(
                runset, qrels, metric=name, cutoff=metric_cutoff,
                relevance_threshold=config.relevance_threshold,
            )
            for run_tag in runset.run_tags():
                for topic_id in scores.topics():
                    records.append(
                        {
                            "section": "retrieval",
                            "qrels": side,
                            "metric": descriptor,
                            "run_tag": run_tag,
                            "topic_id": topic_id,
                            "value": scores.scores[run_tag][topic_id],
                        }
                    )
                records.append(
                    {
                        "section": "retrieval",
                        "qrels": side,
                        "metric": descriptor,
                        "run_tag": run_tag,
                        "topic_id": "all",
                        "value": scores.mean(run_tag),
                    }
                )
            if scores.excluded_topics:
                records.append(
                    {
                        "section": "note",
                        "text": (
                            f"qrels={side} metric={descriptor}: topics without "
                            f"relevant documents excluded: "
                            f"{', '.join(sorted(scores.excluded_topics))}"
                        ),
                    }
                )

    matrices: dict[str, significance.SignificanceMatrix] = {}
    if len(runset.run_tags()) >= 2:
        for side, qrels in sides:
            try:
                matrix = significance.decision_matrix(
                    runset, qrels, metric=metric_name, cutoff=cutoff,
                    alpha=config.alpha,
                    relevance_threshold=config.relevance_threshold,
                )
            except significance.TooFewPairs as exc:
                records.append(
                    {"section": "note", "text": f"qrels={side}: {exc}"}
                )
                continue
            matrices[side] = matrix
            for run_a, run_b in matrix.pairs():
                raw_p, adjusted_p = matrix.pvalues[(run_a, run_b)]
                records.append(
                    {
                        "section": "significance",
                        "qrels": side,
                        "metric": config.metric,
                        "alpha": config.alpha,
                        "run_a": run_a,
                        "run_b": run_b,
                        "raw_p": raw_p,
                        "adjusted_p": adjusted_p,
                        "decision": matrix.decisions[(run_a, run_b)],
                    }
                )
    else:
        records.append(
            {"section": "note", "text": "fewer than two runs: no significance decisions"}
        )

    if qrels_a is not None:
        universe, notes = _llm_universe(qrels_b)
        for text in notes:
            records.append({"section": "note", "text": text})
        per_topic, mean_f1 = per_query_f1(
            qrels_b, qrels_a, universe, relevance_threshold=config.relevance_threshold
        )
        for topic_id in sorted(per_topic):
            records.append(
                {
                    "section": "fidelity",
                    "measure": "f1",
                    "topic_id": topic_id,
                    "value": per_topic[topic_id],
                }
            )
        records.append(
            {"section": "fidelity", "measure": "f1", "topic_id": "all", "value": mean_f1}
        )
        pairs = [
            (
                "relevant" if qrels_a.is_relevant(t, d, config.relevance_threshold) else "nonrelevant",
                "relevant" if qrels_b.is_relevant(t, d, config.relevance_threshold) else "nonrelevant",
            )
            for t, d in universe
        ]
        confusion = ConfusionMatrix.from_pairs(pairs, labels=("relevant", "nonrelevant"))
        records.append(
            {
                "section": "fidelity",
                "measure": "mcc_binary",
                "topic_id": "all",
                "value": mcc(confusion),
            }
        )
        if "a" in matrices and "b" in matrices:
            for binary, measure in ((False, "mcc_3class"), (True, "mcc_binary")):
                records.append(
                    {
                        "section": "preservation",
                        "measure": measure,
                        "value": significance.preservation_mcc(
                            matrices["a"], matrices["b"], binary=binary
                        ),
                    }
                )
    else:
        records.append(
            {
                "section": "note",
                "text": "no reference judgement set: fidelity and preservation omitted",
            }
        )
    return records


def render_report(records: list[dict]) -> str:
    """Human-readable rendering of the evaluation records."""
    lines: list[str] = []

    retrieval = [r for r in records if r["section"] == "retrieval" and r["topic_id"] == "all"]
    if retrieval:
        lines.append("Retrieval effectiveness (mean over evaluated topics)")
        by_key: dict[tuple[str, str], list[dict]] = {}
        for record in retrieval:
            by_key.setdefault((record["qrels"], record["metric"]), []).append(record)
        for (side, metric), rows in sorted(by_key.items()):
            lines.append(f"  judgements={side} metric={metric}")
            for row in sorted(rows, key=lambda r: r["run_tag"]):
                lines.append(f"    {row['run_tag']:<20s} {row['value']:.4f}")
        lines.append("")

    sig = [r for r in records if r["section"] == "significance"]
    if sig:
        alpha = sig[0]["alpha"]
        metric = sig[0]["metric"]
        lines.append(f"Significance decisions (metric={metric}, alpha={alpha})")
        for side in ("a", "b"):
            rows = [r for r in sig if r["qrels"] == side]
            if not rows:
                continue
            lines.append(f"  judgements={side}")
            for row in sorted(rows, key=lambda r: (r["run_a"], r["run_b"])):
                lines.append(
                    f"    {row['run_a']} vs {row['run_b']}: {row['decision']} "
                    f"(raw p={row['raw_p']:.4g}, adjusted p={row['adjusted_p']:.4g})"
                )
        lines.append("")

    fidelity = [r for r in records if r["section"] == "fidelity"]
    if fidelity:
        lines.append("Fidelity of automatic judgements vs the reference")
        for row in fidelity:
            if row["measure"] == "f1" and row["topic_id"] != "all":
                continue
            label = {"f1": "mean per-topic F1", "mcc_binary": "MCC"}[row["measure"]]
            lines.append(f"  {label:<20s} {row['value']:.4f}")
        lines.append("")

    preservation = [r for r in records if r["section"] == "preservation"]
    if preservation:
        lines.append("Decision preservation (reference vs candidate matrices)")
        for row in preservation:
            lines.append(f"  {row['measure']:<20s} {row['value']:.4f}")
        lines.append("")

    notes = [r for r in records if r["section"] == "note"]
    if notes:
        lines.append("Notes")
        for row in notes:
            lines.append(f"  - {row['text']}")
        lines.append("")
    return "\n".join(lines)


def write_report(records: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_report(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def cmd_evaluate(
    config: ExperimentConfig,
    qrels_b_path: str | None = None,
    qrels_a_path: str | None = None,
) -> list[dict]:
    """Evaluate a candidate judgement set and write the report files."""
    collection = load_collection(config)
    candidate_path = (
        qrels_b_path
        if qrels_b_path is not None
        else str(Path(config.output_dir) / HYBRID_QRELS_NAME)
    )
    qrels_b = read_qrels_with_provenance(candidate_path)
    reference_path = qrels_a_path if qrels_a_path is not None else config.gold_qrels
    qrels_a = None
    if reference_path is not None:
        with open(reference_path, encoding="utf-8") as fh:
            qrels_a = parse_qrels(fh, source="gold")
    records = evaluate_qrels(config, collection.runset, qrels_b, qrels_a)
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    config.snapshot(output_dir / CONFIG_SNAPSHOT_NAME)
    write_report(records, output_dir / REPORT_JSONL_NAME)
    (output_dir / REPORT_TEXT_NAME).write_text(render_report(records), encoding="utf-8")
    return records


def cmd_variability(config: ExperimentConfig, executions: int = 10) -> dict:
    """Re-run example-based judging with fresh example draws per execution.

    Each execution re-judges the automatic portion with a distinct derived
    seed, scores per-topic F1 against the reference, and the harness reports
    every pairwise absolute F1 difference per topic.
    """
    if executions < 2:
        raise ConfigError(f"variability needs >= 2 executions, got {executions}")
    strategy = config.parsed_strategy()
    if not strategy.uses_examples:
        raise ConfigError(
            f"variability applies to example-based strategies, not {strategy.kind}"
        )
    collection = load_collection(config)
    if collection.gold is None:
        raise ConfigError("variability needs gold_qrels to score F1 against")
    stage = pool_stage(config, collection)
    human_qrels, _ = human_stage(config, collection, stage)
    templates = assessor.TemplateSet.load(config.templates_dir)
    output_dir = Path(config.output_dir)
    base_dir = output_dir / "variability"
    base_dir.mkdir(parents=True, exist_ok=True)
    config.snapshot(output_dir / CONFIG_SNAPSHOT_NAME)

    per_execution_f1: dict[int, dict[str, float]] = {}
    universe = sorted(set(stage.llm_pairs))
    for execution in range(executions):
        exec_config = dataclasses.replace(
            config,
            # distinct, order-independent seed per execution
            seed=derive_key(config.seed, "variability", execution),
            output_dir=str(base_dir / f"exec_{execution:02d}"),
            cache_dir=str(config.resolved_cache_dir()),
        )
        gateway = build_gateway(exec_config, collection.gold)
        log = assessor.JudgementLog(
            Path(exec_config.output_dir) / JUDGEMENT_LOG_NAME
        )
        records = assessor.judge_pairs(
            gateway, templates, strategy, stage.llm_pairs,
            collection.topics, collection.corpus, human_qrels,
            seed=exec_config.seed, log=log,
            context_budget=config.context_budget,
            relevance_threshold=config.relevance_threshold,
        )
        llm_qrels = assessor.records_to_qrels(records)
        per_topic, _ = per_query_f1(
            llm_qrels, collection.gold, universe,
            relevance_threshold=config.relevance_threshold,
        )
        per_execution_f1[execution] = per_topic

    topics = sorted({t for scores in per_execution_f1.values() for t in scores})
    scores_path = base_dir / "f1_scores.csv"
    with scores_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["topic_id", "execution", "f1"])
        for topic_id in topics:
            for execution in range(executions):
                writer.writerow(
                    [topic_id, execution, f"{per_execution_f1[execution][topic_id]:.6f}"]
                )
    diffs_path = base_dir / "f1_pairwise_diffs.csv"
    max_diff = 0.0
    with diffs_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["topic_id", "exec_a", "exec_b", "abs_diff"])
        for topic_id in topics:
            for a, b in itertools.combinations(range(executions), 2):
                diff = abs(
                    per_execution_f1[a][topic_id] - per_execution_f1[b][topic_id]
                )
                max_diff = max(max_diff, diff)
                writer.writerow([topic_id, a, b, f"{diff:.6f}"])
    return {
        "executions": executions,
        "topics": len(topics),
        "pairwise_diffs_per_topic": executions * (executions - 1) // 2,
        "max_abs_diff": max_diff,
        "scores_csv": str(scores_path),
        "diffs_csv": str(diffs_path),
    }


def cmd_grid(config: ExperimentConfig, strategies: list[str]) -> list[dict]:
    """Judge under several strategies and compare their fidelity.

    Each cell runs the full judge pipeline in its own subdirectory with a
    shared completion cache; a failing cell is reported in its row rather
    than aborting the sweep.
    """
    if not strategies:
        raise ConfigError("grid needs at least one strategy")
    collection = load_collection(config)
    if collection.gold is None:
        raise ConfigError("grid needs gold_qrels to compare against")
    seen: set[str] = set()
    unique: list[str] = []
    for descriptor in strategies:
        if descriptor in seen:
            logger.warning("duplicate grid strategy %r skipped", descriptor)
            continue
        seen.add(descriptor)
        unique.append(descriptor)

    output_dir = Path(config.output_dir)
    grid_dir = output_dir / "grid"
    grid_dir.mkdir(parents=True, exist_ok=True)
    config.snapshot(output_dir / CONFIG_SNAPSHOT_NAME)
    cache_dir = config.resolved_cache_dir()

    rows: list[dict] = []
    for descriptor in unique:
        cell_name = descriptor.replace(":", "_")
        cell_config = dataclasses.replace(
            config,
            strategy=descriptor,
            shots=0,
            output_dir=str(grid_dir / cell_name),
            cache_dir=str(cache_dir),
        )
        row: dict = {"strategy": descriptor}
        try:
            cell_config.validate()
            summary = cmd_judge(cell_config)
            hybrid = read_qrels_with_provenance(summary["hybrid_qrels"])
            universe, _ = _llm_universe(hybrid)
            _, mean_f1 = per_query_f1(
                hybrid, collection.gold, universe,
                relevance_threshold=config.relevance_threshold,
            )
            row["mean_f1"] = mean_f1
            metric_name, cutoff = parse_metric(config.metric)
            matrix_a = significance.decision_matrix(
                collection.runset, collection.gold, metric=metric_name,
                cutoff=cutoff, alpha=config.alpha,
                relevance_threshold=config.relevance_threshold,
            )
            matrix_b = significance.decision_matrix(
                collection.runset, hybrid, metric=metric_name,
                cutoff=cutoff, alpha=config.alpha,
                relevance_threshold=config.relevance_threshold,
            )
            row["preservation_mcc"] = significance.preservation_mcc(
                matrix_a, matrix_b, binary=False
            )
            row["preservation_mcc_binary"] = significance.preservation_mcc(
                matrix_a, matrix_b, binary=True
            )
            row["error"] = None
        except HybridPoolError as exc:
            logger.warning("grid cell %r failed: %s", descriptor, exc)
            row.setdefault("mean_f1", None)
            row.setdefault("preservation_mcc", None)
            row.setdefault("preservation_mcc_binary", None)
            row["error"] = str(exc)
        rows.append(row)

    summary_path = grid_dir / "summary.csv"
    with summary_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["strategy", "mean_f1", "preservation_mcc", "preservation_mcc_binary", "error"]
        )
        for row in rows:
            writer.writerow(
                [
                    row["strategy"],
                    "" if row["mean_f1"] is None else f"{row['mean_f1']:.6f}",
                    ""
                    if row["preservation_mcc"] is None
                    else f"{row['preservation_mcc']:.6f}",
                    ""
                    if row["preservation_mcc_binary"] is None
                    else f"{row['preservation_mcc_binary']:.6f}",
                    row["error"] or "",
                ]
            )
    return rows
