"""Pool construction, shallow/deep splitting, and stratified sampling.

The randomized checks compare against brute-force oracles written directly
from the definitions: a pool is the union of top-k entries, min_rank is the
minimum rank over contributing runs, and the stratified allocation follows
largest-remainder rounding.  The sampling oracle re-implements the full
seed -> SHA-256 -> Philox -> rejection -> Fisher-Yates chain so any drift
in the production stream breaks these tests.
"""

from __future__ import annotations

import hashlib
import io
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridpool.pooling import (
    DEFAULT_K,
    DEFAULT_K_HUMAN,
    InvalidDepths,
    Pool,
    PoolMember,
    TopicNotInRuns,
    UnjudgedPoolMember,
    create_pool,
    export_pool,
    load_pool_export,
    simulate_human_judge,
    split_pool,
    stratified_sample,
)
from hybridpool.trec_io import Qrels, RunEntry, RunSet

# ---------------------------------------------------------------------------
# helpers


def make_runset(rankings: dict[str, dict[str, list[str]]]) -> RunSet:
    """rankings[run_tag][topic_id] = doc ids in rank order (rank 1 first)."""
    runs = {
        tag: {
            topic: [
                RunEntry(doc_id=d, rank=i + 1, score=float(1000 - i))
                for i, d in enumerate(docs)
            ]
            for topic, docs in per_topic.items()
        }
        for tag, per_topic in rankings.items()
    }
    return RunSet(runs=runs)


def random_rankings(
    rng: random.Random, n_runs: int = 3, n_topics: int = 2, depth: int = 15
) -> dict[str, dict[str, list[str]]]:
    universe = [f"d{i:03d}" for i in range(depth * 2)]
    return {
        f"run{r}": {
            f"t{t}": rng.sample(universe, rng.randint(1, depth))
            for t in range(n_topics)
        }
        for r in range(n_runs)
    }


def oracle_pool(rankings: dict[str, dict[str, list[str]]], topic: str, k: int):
    """Definition-based pool: min rank over every run's top-k entries."""
    min_rank: dict[str, int] = {}
    contributors: dict[str, set[str]] = {}
    for tag, per_topic in rankings.items():
        for rank, doc in enumerate(per_topic.get(topic, [])[:k], start=1):
            min_rank[doc] = min(min_rank.get(doc, rank), rank)
            contributors.setdefault(doc, set()).add(tag)
    return min_rank, contributors


# Independent re-implementation of the production random stream.


def oracle_u64_stream(*parts: object):
    material = "\x1f".join("" if p is None else str(p) for p in parts)
    key = int.from_bytes(hashlib.sha256(material.encode("utf-8")).digest()[:16], "big")
    bits = np.random.Philox(key=key)
    while True:
        yield int(bits.random_raw())


def oracle_sample(parts: tuple, items: list[str], k: int) -> list[str]:
    stream = oracle_u64_stream(*parts)

    def randbelow(n: int) -> int:
        limit = (2**64 // n) * n
        while True:
            u = next(stream)
            if u < limit:
                return u % n

    pool = list(items)
    k = min(k, len(pool))
    out = []
    for i in range(k):
        j = i + randbelow(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
        out.append(pool[i])
    return out


def oracle_allocation(n_rel: int, n_nonrel: int, fraction: float) -> dict[str, int]:
    """Largest-remainder rounding; ties prefer the larger stratum."""
    sizes = {"relevant": n_rel, "nonrelevant": n_nonrel}
    total = math.ceil(fraction * (n_rel + n_nonrel))
    alloc = {name: math.floor(fraction * n) for name, n in sizes.items()}
    remainders = {name: fraction * n - alloc[name] for name, n in sizes.items()}
    order = sorted(sizes, key=lambda name: (-remainders[name], -sizes[name], name))
    for name in order[: total - sum(alloc.values())]:
        alloc[name] += 1
    return alloc


def gold_for(topic: str, relevant: set[str], all_docs: set[str]) -> Qrels:
    qrels = Qrels()
    for doc in sorted(all_docs):
        qrels.add(topic, doc, 1 if doc in relevant else 0, "gold")
    return qrels


# ---------------------------------------------------------------------------
# pool construction


class TestCreatePool:
    def test_union_of_top_k(self):
        rankings = {
            "a": {"t1": ["d1", "d2", "d3", "d4"]},
            "b": {"t1": ["d3", "d5", "d1", "d6"]},
        }
        pool = create_pool(make_runset(rankings), "t1", k=2)
        assert pool.doc_ids() == ["d1", "d2", "d3", "d5"]

    def test_min_rank_over_runs(self):
        rankings = {
            "a": {"t1": ["d1", "d2", "d3"]},
            "b": {"t1": ["d3", "d1", "d2"]},
        }
        pool = create_pool(make_runset(rankings), "t1", k=3)
        assert pool.members["d1"].min_rank == 1
        assert pool.members["d2"].min_rank == 2
        assert pool.members["d3"].min_rank == 1

    def test_contributing_runs(self):
        rankings = {
            "a": {"t1": ["d1", "d2"]},
            "b": {"t1": ["d2", "d3"]},
        }
        pool = create_pool(make_runset(rankings), "t1", k=2)
        assert pool.members["d1"].contributing_runs == frozenset({"a"})
        assert pool.members["d2"].contributing_runs == frozenset({"a", "b"})

    def test_short_ranking_ok(self):
        pool = create_pool(make_runset({"a": {"t1": ["d1"]}}), "t1", k=10)
        assert pool.doc_ids() == ["d1"]

    def test_unknown_topic(self):
        with pytest.raises(TopicNotInRuns):
            create_pool(make_runset({"a": {"t1": ["d1"]}}), "t9", k=10)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            create_pool(make_runset({"a": {"t1": ["d1"]}}), "t1", k=0)

    def test_matches_oracle_on_random_runsets(self):
        rng = random.Random(7)
        for trial in range(100):
            rankings = random_rankings(rng)
            k = rng.randint(1, 12)
            for topic in ("t0", "t1"):
                expected_rank, expected_runs = oracle_pool(rankings, topic, k)
                pool = create_pool(make_runset(rankings), topic, k=k)
                assert set(pool.members) == set(expected_rank), (trial, topic)
                for doc, member in pool.members.items():
                    assert member.min_rank == expected_rank[doc]
                    assert member.contributing_runs == frozenset(expected_runs[doc])

    def test_pool_grows_with_k(self):
        rng = random.Random(11)
        for _ in range(50):
            rankings = random_rankings(rng)
            runset = make_runset(rankings)
            previous: set[str] = set()
            for k in range(1, 14):
                pool = create_pool(runset, "t0", k=k)
                current = set(pool.members)
                assert previous <= current
                # Deeper cutoffs only add entries at larger ranks, so the
                # min rank of an existing member never changes.
                for doc in previous:
                    assert pool.members[doc].min_rank == prev_pool.members[doc].min_rank
                previous, prev_pool = current, pool


class TestSplitPool:
    def test_partition(self):
        rankings = {"a": {"t1": [f"d{i}" for i in range(1, 11)]}}
        pool = create_pool(make_runset(rankings), "t1", k=10)
        split = split_pool(pool, k_human=3)
        assert split.shallow == {"d1", "d2", "d3"}
        assert split.deep == {f"d{i}" for i in range(4, 11)}

    def test_shallow_and_deep_partition_pool(self):
        rng = random.Random(13)
        for _ in range(100):
            rankings = random_rankings(rng)
            k = rng.randint(2, 12)
            pool = create_pool(make_runset(rankings), "t0", k=k)
            split = split_pool(pool, k_human=rng.randint(1, k - 1))
            assert split.shallow | split.deep == set(pool.members)
            assert not split.shallow & split.deep
            for doc in split.shallow:
                assert pool.members[doc].min_rank <= split.k_human
            for doc in split.deep:
                assert pool.members[doc].min_rank > split.k_human

    def test_shallow_grows_with_k_human(self):
        rng = random.Random(17)
        for _ in range(50):
            pool = create_pool(make_runset(random_rankings(rng)), "t0", k=12)
            previous: frozenset[str] = frozenset()
            for k_human in range(1, 12):
                split = split_pool(pool, k_human=k_human)
                assert previous <= split.shallow
                previous = split.shallow

    def test_defaults(self):
        assert (DEFAULT_K, DEFAULT_K_HUMAN) == (10, 3)

    @pytest.mark.parametrize("k_human", [0, 10, 11, -1])
    def test_invalid_k_human(self, k_human):
        pool = create_pool(
            make_runset({"a": {"t1": [f"d{i}" for i in range(1, 11)]}}), "t1", k=10
        )
        with pytest.raises(InvalidDepths):
            split_pool(pool, k_human=k_human)


@settings(max_examples=60, deadline=None)
@given(
    data=st.dictionaries(
        st.sampled_from(["runA", "runB", "runC", "runD"]),
        st.lists(
            st.integers(min_value=0, max_value=30).map(lambda i: f"d{i:02d}"),
            min_size=1,
            max_size=15,
            unique=True,
        ),
        min_size=1,
        max_size=4,
    ),
    k=st.integers(min_value=2, max_value=12),
)
def test_pool_properties(data, k):
    rankings = {tag: {"t0": docs} for tag, docs in data.items()}
    expected_rank, _ = oracle_pool(rankings, "t0", k)
    pool = create_pool(make_runset(rankings), "t0", k=k)
    assert {d: m.min_rank for d, m in pool.members.items()} == expected_rank
    split = split_pool(pool, k_human=k - 1)
    assert split.shallow | split.deep == set(pool.members)
    assert not split.shallow & split.deep


# ---------------------------------------------------------------------------
# stratified sampling


class TestStratifiedAllocation:
    def test_five_rel_fifteen_nonrel_tenth(self):
        # quotas 0.5 / 1.5 -> floors 0 / 1, one leftover slot; equal
        # remainders resolve toward the larger stratum.
        assert oracle_allocation(5, 15, 0.10) == {"relevant": 0, "nonrelevant": 2}

    def test_five_rel_six_nonrel_tenth(self):
        # quotas 0.5 / 0.6 -> floors 0 / 0, two leftovers; nonrelevant has
        # the larger remainder, relevant takes the second slot.
        assert oracle_allocation(5, 6, 0.10) == {"relevant": 1, "nonrelevant": 1}

    @pytest.mark.parametrize(
        "n_rel,n_nonrel,fraction",
        [(5, 15, 0.10), (5, 6, 0.10), (1, 1, 0.5), (0, 10, 0.3), (7, 0, 0.25)],
    )
    def test_allocation_sums_to_ceiling(self, n_rel, n_nonrel, fraction):
        alloc = oracle_allocation(n_rel, n_nonrel, fraction)
        assert sum(alloc.values()) == math.ceil(fraction * (n_rel + n_nonrel))


class TestStratifiedSample:
    def build(self, n_rel: int, n_nonrel: int) -> tuple[Pool, Qrels, set[str]]:
        docs = [f"r{i:02d}" for i in range(n_rel)] + [
            f"n{i:02d}" for i in range(n_nonrel)
        ]
        pool = Pool(
            topic_id="t1",
            k=10,
            members={d: PoolMember(min_rank=1, contributing_runs=frozenset({"a"})) for d in docs},
        )
        relevant = {d for d in docs if d.startswith("r")}
        return pool, gold_for("t1", relevant, set(docs)), relevant

    def test_class_counts_follow_allocation(self):
        for n_rel, n_nonrel, fraction in [(5, 15, 0.10), (5, 6, 0.10), (4, 4, 0.5)]:
            pool, gold, relevant = self.build(n_rel, n_nonrel)
            sample = stratified_sample(pool, gold, fraction, seed=3)
            alloc = oracle_allocation(n_rel, n_nonrel, fraction)
            assert len({d for d in sample if d in relevant}) == alloc["relevant"]
            assert len(sample - relevant) == alloc["nonrelevant"]

    def test_zero_relevant_slots_possible(self):
        # With 5 relevant / 15 non-relevant at 10%, both slots go to the
        # non-relevant stratum.
        pool, gold, relevant = self.build(5, 15)
        sample = stratified_sample(pool, gold, 0.10, seed=0)
        assert len(sample) == 2
        assert not sample & relevant

    def test_matches_independent_chain_oracle(self):
        for seed in (0, 1, 42):
            pool, gold, relevant = self.build(5, 6)
            sample = stratified_sample(pool, gold, 0.10, seed=seed)
            expected: set[str] = set()
            for name, docs in (
                ("relevant", sorted(relevant)),
                ("nonrelevant", sorted(set(pool.members) - relevant)),
            ):
                expected.update(
                    oracle_sample((seed, "stratified", "t1", name), docs, 1)
                )
            assert sample == expected

    def test_bit_identical_for_fixed_seed(self):
        pool, gold, _ = self.build(8, 12)
        first = stratified_sample(pool, gold, 0.3, seed=99)
        for _ in range(3):
            assert stratified_sample(pool, gold, 0.3, seed=99) == first

    def test_seed_changes_sample(self):
        pool, gold, _ = self.build(20, 20)
        samples = {
            frozenset(stratified_sample(pool, gold, 0.25, seed=s)) for s in range(8)
        }
        assert len(samples) > 1

    def test_fraction_one_returns_whole_pool(self):
        pool, gold, _ = self.build(3, 4)
        assert stratified_sample(pool, gold, 1.0, seed=0) == set(pool.members)

    def test_invalid_fraction(self):
        pool, gold, _ = self.build(2, 2)
        for fraction in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                stratified_sample(pool, gold, fraction, seed=0)

    def test_unjudged_pool_member_rejected(self):
        pool, gold, _ = self.build(2, 2)
        pool.members["extra"] = PoolMember(min_rank=2, contributing_runs=frozenset({"a"}))
        with pytest.raises(UnjudgedPoolMember):
            stratified_sample(pool, gold, 0.5, seed=0)

    def test_respects_relevance_threshold(self):
        docs = {"d1": 2, "d2": 1, "d3": 0, "d4": 0}
        qrels = Qrels()
        for doc, grade in docs.items():
            qrels.add("t1", doc, grade, "gold")
        pool = Pool(
            topic_id="t1",
            k=10,
            members={d: PoolMember(1, frozenset({"a"})) for d in docs},
        )
        # threshold 2: only d1 counts as relevant -> strata sizes 1 / 3.
        sample = stratified_sample(pool, qrels, 0.5, seed=5, relevance_threshold=2)
        alloc = oracle_allocation(1, 3, 0.5)
        assert len(sample & {"d1"}) == alloc["relevant"]
        assert len(sample & {"d2", "d3", "d4"}) == alloc["nonrelevant"]


# ---------------------------------------------------------------------------
# simulated human judging


class TestSimulateHumanJudge:
    def test_copies_gold_grades(self):
        gold = Qrels()
        gold.add("t1", "d1", 2, "gold")
        gold.add("t1", "d2", 0, "gold")
        result = simulate_human_judge([("t1", "d1"), ("t1", "d2")], gold)
        assert result.qrels.grade("t1", "d1") == 2
        assert result.qrels.grade("t1", "d2") == 0
        assert result.assumed_nonrelevant == frozenset()

    def test_missing_pairs_assumed_nonrelevant(self):
        gold = Qrels()
        gold.add("t1", "d1", 1, "gold")
        result = simulate_human_judge([("t1", "d1"), ("t1", "dx")], gold)
        assert result.qrels.grade("t1", "dx") == 0
        assert result.assumed_nonrelevant == frozenset({("t1", "dx")})

    def test_duplicate_pairs_collapsed(self):
        gold = Qrels()
        gold.add("t1", "d1", 1, "gold")
        result = simulate_human_judge([("t1", "d1")] * 3, gold)
        assert result.qrels.grade("t1", "d1") == 1

    def test_provenance_is_human(self):
        gold = Qrels()
        gold.add("t1", "d1", 1, "gold")
        result = simulate_human_judge([("t1", "d1")], gold)
        assert result.qrels.provenance[("t1", "d1")] == "human"


# ---------------------------------------------------------------------------
# pool snapshots


class TestPoolExport:
    def test_round_trip(self):
        rankings = {
            "a": {"t1": ["d1", "d2", "d3", "d4", "d5"]},
            "b": {"t1": ["d3", "d6", "d1", "d7", "d8"]},
        }
        pool = create_pool(make_runset(rankings), "t1", k=5)
        split = split_pool(pool, k_human=2)
        buffer = io.StringIO()
        export_pool(pool, split, buffer)
        buffer.seek(0)
        pools, splits = load_pool_export(buffer)
        assert set(pools) == {"t1"}
        loaded = pools["t1"]
        assert {d: m.min_rank for d, m in loaded.members.items()} == {
            d: m.min_rank for d, m in pool.members.items()
        }
        assert {d: m.contributing_runs for d, m in loaded.members.items()} == {
            d: m.contributing_runs for d, m in pool.members.items()
        }
        assert splits["t1"].shallow == split.shallow
        assert splits["t1"].deep == split.deep

    def test_export_sorted_by_doc_id(self):
        pool = create_pool(
            make_runset({"a": {"t1": ["z9", "m5", "a1"]}}), "t1", k=3
        )
        split = split_pool(pool, k_human=2)
        buffer = io.StringIO()
        export_pool(pool, split, buffer)
        lines = buffer.getvalue().splitlines()
        doc_order = [line.split('"doc_id": "')[1].split('"')[0] for line in lines]
        assert doc_order == sorted(doc_order)
