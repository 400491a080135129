"""Pairwise-run significance testing and decision-preservation scoring.

The pipeline asks one question of every pair of runs: does run A beat run B
on the per-topic scores, at level alpha, after Benjamini-Hochberg correction
across all pairs of the evaluation?  Comparing the answers under gold qrels
with the answers under constructed qrels (via a confusion matrix and MCC)
measures how well the constructed judgements preserve the conclusions an
evaluator would draw.

The Wilcoxon signed-rank p-value is exact (full sign enumeration over the
midranked absolute differences, computed by convolution) for n <= 25 after
zero differences are dropped, and a tie- and continuity-corrected normal
approximation beyond that.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import HybridPoolError
from .metrics import ConfusionMatrix, TopicScores, mcc, topic_scores
from .trec_io import Qrels, RunSet

EXACT_LIMIT = 25

A_GT_B = "a_gt_b"
B_GT_A = "b_gt_a"
NO_SIG_DIFF = "no_sig_diff"
DECISIONS = (A_GT_B, B_GT_A, NO_SIG_DIFF)


class LengthMismatch(HybridPoolError):
    pass


class TooFewPairs(HybridPoolError):
    pass


class OutOfRangeP(HybridPoolError):
    pass


class PairSetMismatch(HybridPoolError):
    pass


def _midranks(values: Sequence[float]) -> list[float]:
    """Ranks 1..n with tied values sharing the mean of their rank range."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mid = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    return ranks


def wilcoxon_signed_rank_two_sided(
    x: Sequence[float], y: Sequence[float]
) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped before ranking (Wilcoxon's rule).  With no
    nonzero differences the samples are indistinguishable and p = 1.
    """
    if len(x) != len(y):
        raise LengthMismatch(f"|x|={len(x)} != |y|={len(y)}")
    if len(x) < 2:
        raise TooFewPairs(f"need at least 2 pairs, got {len(x)}")
    diffs = [float(a) - float(b) for a, b in zip(x, y)]
    diffs = [d for d in diffs if d != 0.0]
    n = len(diffs)
    if n == 0:
        return 1.0
    ranks = _midranks([abs(d) for d in diffs])
    w_plus = sum(r for d, r in zip(diffs, ranks) if d > 0)
    if n <= EXACT_LIMIT:
        return _exact_p(ranks, w_plus)
    return _normal_approx_p(diffs, ranks, w_plus)


def _exact_p(ranks: Sequence[float], w_plus: float) -> float:
    """Exact two-sided p over all 2^n sign assignments.

    Midranks are half-integers at worst, so doubling makes every rank an
    integer and the null distribution of 2*W+ is the convolution of {0, 2r}
    over the ranks; counts stay exact in Python integers.
    """
    doubled = [int(round(2 * r)) for r in ranks]
    total = sum(doubled)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled:
        for w in range(total, r - 1, -1):
            if counts[w - r]:
                counts[w] += counts[w - r]
    w2 = int(round(2 * w_plus))
    n_le = sum(counts[: w2 + 1])
    n_ge = sum(counts[w2:])
    p = 2 * min(n_le, n_ge) / 2 ** len(ranks)
    return min(1.0, p)


def _normal_approx_p(
    diffs: Sequence[float], ranks: Sequence[float], w_plus: float
) -> float:
    """Normal approximation with tie correction and continuity correction."""
    n = len(diffs)
    mu = n * (n + 1) / 4
    tie_counts: dict[float, int] = {}
    for d in diffs:
        tie_counts[abs(d)] = tie_counts.get(abs(d), 0) + 1
    tie_term = sum(t**3 - t for t in tie_counts.values())
    var = n * (n + 1) * (2 * n + 1) / 24 - tie_term / 48
    if var <= 0:
        return 1.0
    z = max(0.0, abs(w_plus - mu) - 0.5) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2)))


def benjamini_hochberg(pvalues: Sequence[float]) -> list[float]:
    """Step-up adjusted p-values, returned in the input order.

    adjusted_(i) = min over j >= i of m * p_(j) / j, clipped to 1, where
    (i) indexes the p-values sorted ascending.
    """
    m = len(pvalues)
    for p in pvalues:
        if not 0 <= p <= 1:
            raise OutOfRangeP(f"p-value {p} outside [0, 1]")
    order = sorted(range(m), key=lambda i: pvalues[i])
    adjusted = [0.0] * m
    running_min = 1.0
    for pos in range(m - 1, -1, -1):
        i = order[pos]
        running_min = min(running_min, m * pvalues[i] / (pos + 1))
        adjusted[i] = min(1.0, running_min)
    return adjusted


@dataclass
class SignificanceMatrix:
    """Directional decisions for every unordered run pair.

    Pairs are canonicalized as (a, b) with a < b lexicographically; the
    decision is directional only when the adjusted p-value is strictly below
    alpha, with direction taken from the sign of the mean score difference.
    """

    alpha: float
    metric: str
    decisions: dict[tuple[str, str], str] = field(default_factory=dict)
    pvalues: dict[tuple[str, str], tuple[float, float]] = field(default_factory=dict)

    def pairs(self) -> list[tuple[str, str]]:
        return sorted(self.decisions)


def decision_matrix_from_scores(
    scores: TopicScores, alpha: float = 0.05
) -> SignificanceMatrix:
    run_tags = sorted(scores.scores)
    if len(run_tags) < 2:
        raise TooFewPairs(f"need at least 2 runs, got {len(run_tags)}")
    topics = scores.topics()
    if len(topics) < 2:
        raise TooFewPairs(f"need at least 2 surviving topics, got {len(topics)}")

    matrix = SignificanceMatrix(alpha=alpha, metric=scores.metric)
    pairs = list(itertools.combinations(run_tags, 2))
    raw: list[float] = []
    mean_diffs: list[float] = []
    for a, b in pairs:
        va = scores.vector(a, topics)
        vb = scores.vector(b, topics)
        raw.append(wilcoxon_signed_rank_two_sided(va, vb))
        mean_diffs.append(sum(da - db for da, db in zip(va, vb)) / len(topics))
    adjusted = benjamini_hochberg(raw)
    for (a, b), p_raw, p_adj, diff in zip(pairs, raw, adjusted, mean_diffs):
        if p_adj < alpha and diff > 0:
            decision = A_GT_B
        elif p_adj < alpha and diff < 0:
            decision = B_GT_A
        else:
            decision = NO_SIG_DIFF
        matrix.decisions[(a, b)] = decision
        matrix.pvalues[(a, b)] = (p_raw, p_adj)
    return matrix


def decision_matrix(
    runset: RunSet,
    qrels: Qrels,
    metric: str = "ap",
    cutoff: int = 1000,
    alpha: float = 0.05,
    relevance_threshold: int = 1,
) -> SignificanceMatrix:
    """Per-topic scores, one Wilcoxon test per run pair, BH across pairs."""
    return decision_matrix_from_scores(
        topic_scores(
            runset, qrels, metric=metric, cutoff=cutoff,
            relevance_threshold=relevance_threshold,
        ),
        alpha=alpha,
    )


def preservation_confusion(
    gold_matrix: SignificanceMatrix,
    predicted_matrix: SignificanceMatrix,
    binary: bool = False,
) -> ConfusionMatrix:
    """Gold-vs-predicted decision confusion over the shared run pairs."""
    if gold_matrix.pairs() != predicted_matrix.pairs():
        raise PairSetMismatch(
            f"gold pairs {gold_matrix.pairs()} != predicted pairs {predicted_matrix.pairs()}"
        )
    if binary:
        collapse = {A_GT_B: "sig", B_GT_A: "sig", NO_SIG_DIFF: "not_sig"}
        observed = [
            (collapse[gold_matrix.decisions[p]], collapse[predicted_matrix.decisions[p]])
            for p in gold_matrix.pairs()
        ]
        return ConfusionMatrix.from_pairs(observed, ("sig", "not_sig"))
    observed = [
        (gold_matrix.decisions[p], predicted_matrix.decisions[p])
        for p in gold_matrix.pairs()
    ]
    return ConfusionMatrix.from_pairs(observed, DECISIONS)


def preservation_mcc(
    gold_matrix: SignificanceMatrix,
    predicted_matrix: SignificanceMatrix,
    binary: bool = False,
) -> float:
    """MCC between gold-based and predicted-based significance decisions."""
    return mcc(preservation_confusion(gold_matrix, predicted_matrix, binary=binary))


def export_matrix(matrix: SignificanceMatrix) -> list[dict]:
    """Line-record form: one dict per run pair."""
    return [
        {
            "run_a": a,
            "run_b": b,
            "raw_p": matrix.pvalues[(a, b)][0],
            "adjusted_p": matrix.pvalues[(a, b)][1],
            "decision": matrix.decisions[(a, b)],
        }
        for a, b in matrix.pairs()
    ]
