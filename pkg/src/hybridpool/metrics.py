"""Ranking-quality and label-agreement metrics.

Conventions (documented divergences from trec_eval where they exist):

- Rankings are taken exactly as given in run files; the rank column is
  authoritative and no score-based re-sorting happens.
- Topics with no relevant gold document (AP) or zero ideal DCG (nDCG) are
  excluded from means; the exclusions are reported, never silently dropped.
- Per-query F1 with an empty confusion (TP+FP+FN = 0) counts as 1.0 so that
  vacuously perfect topics stay in the average.
- An MCC with a zero denominator is defined as 0, the no-information value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import HybridPoolError
from .trec_io import Qrels, RunSet


class EmptyRanking(HybridPoolError):
    pass


class EmptyUniverse(HybridPoolError):
    pass


class EmptyMatrix(HybridPoolError):
    pass


def average_precision(
    ranking: Sequence[str], relevant_docs: set[str], cutoff: int
) -> float:
    """AP at a cutoff: mean precision at the relevant retrieved ranks.

    The normalizer is the number of relevant documents for the topic
    (retrieved or not), so callers pass the full relevant set from qrels.
    """
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    if not ranking:
        raise EmptyRanking("empty ranking")
    total_relevant = len(relevant_docs)
    if total_relevant == 0:
        raise ValueError("AP undefined with zero relevant documents")
    hits = 0
    score = 0.0
    for i, doc_id in enumerate(ranking[:cutoff], start=1):
        if doc_id in relevant_docs:
            hits += 1
            score += hits / i
    return score / total_relevant


def ndcg(ranking: Sequence[str], graded: dict[str, int], cutoff: int) -> float:
    """nDCG at a cutoff with linear gain = grade and log2(i+1) discount.

    ``graded`` holds every judged grade for the topic; the ideal ranking is
    its grades sorted descending.
    """
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    if not ranking:
        raise EmptyRanking("empty ranking")
    ideal = sorted((g for g in graded.values() if g > 0), reverse=True)[:cutoff]
    idcg = sum(g / math.log2(i + 1) for i, g in enumerate(ideal, start=1))
    if idcg == 0:
        raise ValueError("nDCG undefined with zero ideal DCG")
    dcg = sum(
        graded.get(doc_id, 0) / math.log2(i + 1)
        for i, doc_id in enumerate(ranking[:cutoff], start=1)
        if graded.get(doc_id, 0) > 0
    )
    return dcg / idcg


@dataclass
class TopicScores:
    """Per (run, topic) scores for one metric, plus the excluded topics."""

    metric: str
    scores: dict[str, dict[str, float]] = field(default_factory=dict)
    excluded_topics: list[str] = field(default_factory=list)

    def topics(self) -> list[str]:
        seen: set[str] = set()
        for per_topic in self.scores.values():
            seen.update(per_topic)
        return sorted(seen)

    def vector(self, run_tag: str, topics: Sequence[str]) -> list[float]:
        per_topic = self.scores.get(run_tag, {})
        return [per_topic.get(t, 0.0) for t in topics]

    def mean(self, run_tag: str) -> float:
        topics = self.topics()
        if not topics:
            return 0.0
        return sum(self.vector(run_tag, topics)) / len(topics)


def topic_scores(
    runset: RunSet,
    qrels: Qrels,
    metric: str = "ap",
    cutoff: int = 1000,
    relevance_threshold: int = 1,
) -> TopicScores:
    """Score every run on every eligible qrels topic.

    Topics failing the metric's exclusion rule are skipped for all runs.  A
    run that did not retrieve anything for an eligible topic scores 0.
    """
    if metric not in ("ap", "ndcg"):
        raise ValueError(f"unknown metric {metric!r}")
    out = TopicScores(metric=f"{metric}@{cutoff}")
    eligible: list[str] = []
    for topic_id in qrels.topics():
        graded = qrels.for_topic(topic_id)
        if metric == "ap" and not any(
            g >= relevance_threshold for g in graded.values()
        ):
            out.excluded_topics.append(topic_id)
            continue
        if metric == "ndcg" and not any(g > 0 for g in graded.values()):
            out.excluded_topics.append(topic_id)
            continue
        eligible.append(topic_id)

    for run_tag in runset.run_tags():
        per_topic: dict[str, float] = {}
        for topic_id in eligible:
            ranking = [e.doc_id for e in runset.ranking(run_tag, topic_id)]
            if not ranking:
                per_topic[topic_id] = 0.0
            elif metric == "ap":
                relevant = qrels.relevant_docs(topic_id, relevance_threshold)
                per_topic[topic_id] = average_precision(ranking, relevant, cutoff)
            else:
                per_topic[topic_id] = ndcg(ranking, qrels.for_topic(topic_id), cutoff)
        out.scores[run_tag] = per_topic
    return out


def per_query_f1(
    predicted: Qrels,
    gold: Qrels,
    pair_universe: Iterable[tuple[str, str]],
    relevance_threshold: int = 1,
) -> tuple[dict[str, float], float]:
    """Binary F1 per topic over a fixed pair universe, and the topic mean.

    Pairs missing from either qrels count as non-relevant on that side.  A
    topic whose universe produces TP+FP+FN = 0 scores 1.0 (vacuously
    perfect).
    """
    universe = sorted(set(pair_universe))
    if not universe:
        raise EmptyUniverse("empty pair universe")
    per_topic_counts: dict[str, list[int]] = {}
    for topic_id, doc_id in universe:
        p = predicted.is_relevant(topic_id, doc_id, relevance_threshold)
        g = gold.is_relevant(topic_id, doc_id, relevance_threshold)
        tp, fp, fn = per_topic_counts.setdefault(topic_id, [0, 0, 0])
        per_topic_counts[topic_id] = [tp + (p and g), fp + (p and not g), fn + (g and not p)]
    per_topic: dict[str, float] = {}
    for topic_id, (tp, fp, fn) in per_topic_counts.items():
        if tp + fp + fn == 0:
            per_topic[topic_id] = 1.0
        else:
            per_topic[topic_id] = 2 * tp / (2 * tp + fp + fn)
    mean = sum(per_topic.values()) / len(per_topic)
    return per_topic, mean


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix; counts[i][j] = #(gold label i, predicted label j)."""

    labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    @staticmethod
    def from_pairs(
        gold_pred: Iterable[tuple[str, str]], labels: Sequence[str]
    ) -> "ConfusionMatrix":
        index = {label: i for i, label in enumerate(labels)}
        counts = [[0] * len(labels) for _ in labels]
        for g, p in gold_pred:
            counts[index[g]][index[p]] += 1
        return ConfusionMatrix(tuple(labels), tuple(tuple(row) for row in counts))

    def total(self) -> int:
        return sum(sum(row) for row in self.counts)


def generalized_mcc(confusion: ConfusionMatrix) -> float:
    """K-class correlation over a confusion matrix (reduces to MCC for 2x2).

    A zero denominator (a side with only one observed class) yields 0.
    """
    if confusion.total() == 0:
        raise EmptyMatrix("confusion matrix has no observations")
    k = len(confusion.labels)
    c = confusion.counts
    s = confusion.total()
    trace = sum(c[i][i] for i in range(k))
    gold_totals = [sum(c[i][j] for j in range(k)) for i in range(k)]
    pred_totals = [sum(c[i][j] for i in range(k)) for j in range(k)]
    cov = trace * s - sum(t * p for t, p in zip(gold_totals, pred_totals))
    var_gold = s * s - sum(t * t for t in gold_totals)
    var_pred = s * s - sum(p * p for p in pred_totals)
    if var_gold == 0 or var_pred == 0:
        return 0.0
    return cov / math.sqrt(var_gold * var_pred)


def mcc(confusion: ConfusionMatrix) -> float:
    """Matthews correlation: binary formula for 2x2, generalized otherwise.

    Both forms agree on 2x2 input; a zero denominator yields 0.
    """
    if confusion.total() == 0:
        raise EmptyMatrix("confusion matrix has no observations")
    if len(confusion.labels) == 2:
        (tp, fn), (fp, tn) = confusion.counts
        denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        if denom == 0:
            return 0.0
        return (tp * tn - fp * fn) / math.sqrt(denom)
    return generalized_mcc(confusion)
