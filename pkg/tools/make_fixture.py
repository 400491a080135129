"""Generate the committed toy fixture under fixtures/toy/.

A 5-topic, 3-run collection engineered so the downstream statistics land in
known, hand-checkable places:

- every topic has 14 documents; each run ranks exactly 10, and the union of
  ranked documents per topic is 11 docs, all covered by the gold qrels;
- run "rrf" strictly beats "bm25" and "vec" on average precision for every
  topic (one-sided dominance on all 5 topics gives the minimum attainable
  exact two-sided Wilcoxon p of 2/32 = 0.0625 for both pairs), while
  "bm25" and "vec" swap their rankings topic by topic so their per-topic
  differences alternate in sign and stay far from significance;
- the shallow slice of every pool (depth 3) and the deep remainder both
  contain relevant and non-relevant documents;
- topic t3's top document carries grade 2 to exercise the graded metric.

Run: python3 tools/make_fixture.py [--out fixtures/toy]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

SUBJECTS = {
    "t1": ("solar panel recycling methods",
           "how end-of-life photovoltaic panels are collected and reprocessed"),
    "t2": ("deep sea coral habitats",
           "where cold-water corals grow and what conditions they need"),
    "t3": ("ancient roman concrete durability",
           "why roman marine concrete survives and how its chemistry works"),
    "t4": ("urban beekeeping regulations",
           "rules cities impose on keeping honey bee hives"),
    "t5": ("glacier meltwater hydrology",
           "how glacial melt feeds rivers and changes seasonal flow"),
}

OFF_TOPIC = [
    "A review of commuter rail timetables and platform design choices.",
    "Notes on sourdough fermentation temperature and crumb structure.",
    "A guide to repairing vintage film cameras with common tools.",
    "Observations about migratory songbird banding in autumn.",
    "An essay on typeface legibility for roadside signage.",
    "Minutes from a neighborhood book club discussing a mystery novel.",
    "A comparison of stain removal techniques for wool garments.",
    "Instructions for calibrating a hobbyist telescope mount.",
    "A history of regional chili cook-off competitions.",
]

# Rankings by local doc index. Indices 1-5 are relevant, 6-14 are not.
STRONG = [1, 2, 6, 3, 4, 5, 7, 8, 9, 10]   # AP 0.8767: rrf everywhere
MID = [6, 1, 7, 2, 8, 3, 9, 4, 10, 5]      # AP 0.5000
WEAK = [7, 6, 1, 8, 2, 9, 3, 10, 4, 11]    # AP 0.3213 (misses one relevant)

RELEVANT = set(range(1, 6))


def doc_id(topic_id: str, index: int) -> str:
    return f"{topic_id}-d{index:02d}"


def doc_text(topic_id: str, index: int) -> str:
    subject, gloss = SUBJECTS[topic_id]
    if index in RELEVANT:
        return (
            f"This report examines {subject}: {gloss}. "
            f"Section {index} details findings specific to {subject} and "
            f"summarizes the evidence collected in study {index}."
        )
    return (
        f"{OFF_TOPIC[(index - 6) % len(OFF_TOPIC)]} "
        f"Nothing here concerns {subject.split()[0]} matters; item {index} "
        "covers an unrelated pastime."
    )


def average_precision(ranking: list[int]) -> float:
    hits, total = 0, 0.0
    for i, index in enumerate(ranking, start=1):
        if index in RELEVANT:
            hits += 1
            total += hits / i
    return total / len(RELEVANT)


def rankings_for(topic_id: str) -> dict[str, list[int]]:
    number = int(topic_id[1:])
    if number % 2 == 1:
        return {"bm25": MID, "vec": WEAK, "rrf": STRONG}
    return {"bm25": WEAK, "vec": MID, "rrf": STRONG}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="fixtures/toy")
    args = parser.parse_args()
    out = Path(args.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)

    topic_ids = sorted(SUBJECTS)

    # topics.tsv: id, query, human narrative
    with (out / "topics.tsv").open("w", encoding="utf-8") as fh:
        for topic_id in topic_ids:
            subject, gloss = SUBJECTS[topic_id]
            narrative = (
                f"Relevant documents discuss {subject}, including {gloss}. "
                "Documents about other pastimes or industries are not relevant."
            )
            fh.write(f"{topic_id}\t{subject}\t{narrative}\n")

    # corpus.jsonl: 14 documents per topic
    with (out / "corpus.jsonl").open("w", encoding="utf-8") as fh:
        for topic_id in topic_ids:
            for index in range(1, 15):
                record = {
                    "doc_id": doc_id(topic_id, index),
                    "title": f"{SUBJECTS[topic_id][0]} item {index}",
                    "text": doc_text(topic_id, index),
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    # run files: 10 entries per topic, score descending with rank
    for run_tag in ("bm25", "vec", "rrf"):
        with (out / "runs" / f"{run_tag}.run").open("w", encoding="utf-8") as fh:
            for topic_id in topic_ids:
                ranking = rankings_for(topic_id)[run_tag]
                for rank, index in enumerate(ranking, start=1):
                    score = 100.0 - rank
                    fh.write(
                        f"{topic_id} Q0 {doc_id(topic_id, index)} {rank} "
                        f"{score:.1f} {run_tag}\n"
                    )

    # gold.qrels: exactly the union of ranked docs per topic (indices 1-11)
    with (out / "gold.qrels").open("w", encoding="utf-8") as fh:
        for topic_id in topic_ids:
            for index in range(1, 12):
                if index in RELEVANT:
                    grade = 2 if topic_id == "t3" and index == 1 else 1
                else:
                    grade = 0
                fh.write(f"{topic_id} 0 {doc_id(topic_id, index)} {grade}\n")

    verify()
    print(f"fixture written to {out}")


def verify() -> None:
    """Assert the statistical properties the rest of the suite relies on."""
    ap = {tag: average_precision(r) for tag, r in
          {"strong": STRONG, "mid": MID, "weak": WEAK}.items()}
    assert ap["strong"] > ap["mid"] > ap["weak"], ap

    for topic_id in sorted(SUBJECTS):
        per_run = rankings_for(topic_id)
        ap_by_run = {tag: average_precision(r) for tag, r in per_run.items()}
        assert ap_by_run["rrf"] > ap_by_run["bm25"], (topic_id, ap_by_run)
        assert ap_by_run["rrf"] > ap_by_run["vec"], (topic_id, ap_by_run)

        # bm25 - vec alternates sign with topic parity
        diff = ap_by_run["bm25"] - ap_by_run["vec"]
        expected_positive = int(topic_id[1:]) % 2 == 1
        assert (diff > 0) == expected_positive, (topic_id, diff)

        # pool coverage and split class balance at k=10, depth 3
        min_rank: dict[int, int] = {}
        for ranking in per_run.values():
            for rank, index in enumerate(ranking[:10], start=1):
                min_rank[index] = min(min_rank.get(index, rank), rank)
        assert set(min_rank) == set(range(1, 12)), sorted(min_rank)
        shallow = {i for i, r in min_rank.items() if r <= 3}
        deep = set(min_rank) - shallow
        assert shallow & RELEVANT and shallow - RELEVANT, sorted(shallow)
        assert deep & RELEVANT and deep - RELEVANT, sorted(deep)


if __name__ == "__main__":
    main()
