"""Depth-k pooling, shallow/deep splitting, and simulated human judging.

A pool is the union of every run's top-k documents for a topic.  The shallow
portion (min rank over contributing runs <= k_human) goes to human assessors;
the deep remainder goes to the LLM stage.  Defaults are k=10, k_human=3.

All operations are pure functions of immutable inputs and can run in
parallel across topics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable

from .errors import HybridPoolError
from .rng import Stream
from .trec_io import Qrels, RunSet

DEFAULT_K = 10
DEFAULT_K_HUMAN = 3


class TopicNotInRuns(HybridPoolError):
    def __init__(self, topic_id: str):
        self.topic_id = topic_id
        super().__init__(f"topic {topic_id!r} appears in no run")


class InvalidDepths(HybridPoolError):
    def __init__(self, k: int, k_human: int):
        super().__init__(f"need 1 <= k_human < k, got k={k} k_human={k_human}")


class UnjudgedPoolMember(HybridPoolError):
    def __init__(self, topic_id: str, doc_id: str):
        self.topic_id = topic_id
        self.doc_id = doc_id
        super().__init__(
            f"pool member ({topic_id!r}, {doc_id!r}) has no gold judgement; "
            "stratified sampling is undefined without gold labels"
        )


@dataclass(frozen=True)
class PoolMember:
    min_rank: int
    contributing_runs: frozenset[str]


@dataclass
class Pool:
    topic_id: str
    k: int
    members: dict[str, PoolMember] = field(default_factory=dict)

    def doc_ids(self) -> list[str]:
        return sorted(self.members)

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class PoolSplit:
    topic_id: str
    k_human: int
    shallow: frozenset[str]
    deep: frozenset[str]


@dataclass
class HumanJudgementSet:
    """Gold-copied (or externally collected) judgements, provenance=human."""

    qrels: Qrels
    assumed_nonrelevant: frozenset[tuple[str, str]] = frozenset()


def create_pool(runset: RunSet, topic_id: str, k: int = DEFAULT_K) -> Pool:
    """Union of each run's top-k entries for the topic."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    members: dict[str, dict] = {}
    found = False
    for run_tag in runset.run_tags():
        ranking = runset.ranking(run_tag, topic_id)
        if ranking:
            found = True
        for entry in ranking:
            if entry.rank > k:
                break
            info = members.setdefault(entry.doc_id, {"min_rank": entry.rank, "runs": set()})
            info["min_rank"] = min(info["min_rank"], entry.rank)
            info["runs"].add(run_tag)
    if not found:
        raise TopicNotInRuns(topic_id)
    return Pool(
        topic_id=topic_id,
        k=k,
        members={
            doc_id: PoolMember(info["min_rank"], frozenset(info["runs"]))
            for doc_id, info in members.items()
        },
    )


def split_pool(pool: Pool, k_human: int = DEFAULT_K_HUMAN) -> PoolSplit:
    """Partition by min rank: shallow <= k_human, deep above it."""
    if not 1 <= k_human < pool.k:
        raise InvalidDepths(pool.k, k_human)
    shallow = frozenset(d for d, m in pool.members.items() if m.min_rank <= k_human)
    deep = frozenset(pool.members) - shallow
    return PoolSplit(topic_id=pool.topic_id, k_human=k_human, shallow=shallow, deep=deep)


def stratified_sample(
    pool: Pool,
    gold_qrels: Qrels,
    fraction: float,
    seed: int,
    relevance_threshold: int = 1,
) -> set[str]:
    """Per-topic stratified sample with respect to the gold relevance classes.

    Sample size is ceil(fraction * |pool|).  Each binary stratum gets
    floor(fraction * |stratum|) slots, and the remaining slots go to the
    strata with the largest fractional remainders (ties: larger stratum
    first, then label order).  Within a stratum the draw is uniform without
    replacement under the per-topic seeded stream, so results are
    bit-identical for a fixed seed.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    for doc_id in pool.doc_ids():
        if (pool.topic_id, doc_id) not in gold_qrels:
            raise UnjudgedPoolMember(pool.topic_id, doc_id)

    strata: dict[str, list[str]] = {"relevant": [], "nonrelevant": []}
    for doc_id in pool.doc_ids():
        label = gold_qrels.is_relevant(pool.topic_id, doc_id, relevance_threshold)
        strata["relevant" if label else "nonrelevant"].append(doc_id)

    total = math.ceil(fraction * len(pool))
    quotas = {name: fraction * len(docs) for name, docs in strata.items()}
    alloc = {name: math.floor(q) for name, q in quotas.items()}
    leftover = total - sum(alloc.values())
    by_remainder = sorted(
        strata,
        key=lambda name: (-(quotas[name] - alloc[name]), -len(strata[name]), name),
    )
    for name in by_remainder[:leftover]:
        alloc[name] += 1

    sample: set[str] = set()
    for name in sorted(strata):
        if alloc[name] == 0 or not strata[name]:
            continue
        stream = Stream(seed, "stratified", pool.topic_id, name)
        sample.update(stream.sample_without_replacement(strata[name], alloc[name]))
    return sample


def simulate_human_judge(
    pairs: Iterable[tuple[str, str]], gold_qrels: Qrels
) -> HumanJudgementSet:
    """Copy gold grades for the given pairs, provenance=human.

    Pairs absent from gold are judged non-relevant (grade 0) and flagged,
    following the standard unjudged-means-non-relevant assumption.
    """
    qrels = Qrels()
    assumed: set[tuple[str, str]] = set()
    for topic_id, doc_id in sorted(set(pairs)):
        grade = gold_qrels.grade(topic_id, doc_id)
        if grade is None:
            grade = 0
            assumed.add((topic_id, doc_id))
        qrels.add(topic_id, doc_id, grade, "human")
    return HumanJudgementSet(qrels=qrels, assumed_nonrelevant=frozenset(assumed))


def export_pool(pool: Pool, split: PoolSplit, stream: IO[str]) -> None:
    """Write one audit record per pool member, sorted by doc_id."""
    for doc_id in pool.doc_ids():
        member = pool.members[doc_id]
        record = {
            "topic_id": pool.topic_id,
            "doc_id": doc_id,
            "min_rank": member.min_rank,
            "contributing_runs": sorted(member.contributing_runs),
            "portion": "shallow" if doc_id in split.shallow else "deep",
        }
        stream.write(json.dumps(record, sort_keys=True) + "\n")


def load_pool_export(stream: Iterable[str]) -> tuple[dict[str, Pool], dict[str, PoolSplit]]:
    """Inverse of export_pool over a multi-topic snapshot file."""
    pools: dict[str, Pool] = {}
    portions: dict[str, dict[str, str]] = {}
    for line in stream:
        line = line.strip()
        if not line:
            continue
        record = json.loads(line)
        topic_id = record["topic_id"]
        pool = pools.setdefault(topic_id, Pool(topic_id=topic_id, k=0))
        pool.members[record["doc_id"]] = PoolMember(
            record["min_rank"], frozenset(record["contributing_runs"])
        )
        pool.k = max(pool.k, record["min_rank"])
        portions.setdefault(topic_id, {})[record["doc_id"]] = record["portion"]
    splits: dict[str, PoolSplit] = {}
    for topic_id, pool in pools.items():
        shallow = frozenset(
            d for d, p in portions[topic_id].items() if p == "shallow"
        )
        k_human = max(
            (pool.members[d].min_rank for d in shallow), default=DEFAULT_K_HUMAN
        )
        splits[topic_id] = PoolSplit(
            topic_id=topic_id,
            k_human=k_human,
            shallow=shallow,
            deep=frozenset(portions[topic_id]) - shallow,
        )
    return pools, splits
