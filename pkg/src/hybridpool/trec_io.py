"""Parsers and writers for the external file formats.

Formats handled here:

- run files:   ``topic_id Q0 doc_id rank score run_tag`` (whitespace separated)
- qrels files: ``topic_id 0 doc_id grade``
- topics:      ``topic_id<TAB>query_text[<TAB>narrative]``
- corpus:      one JSON record per line with keys ``doc_id``, optional
  ``title``, and ``text`` (UTF-8)

All parsers are single-pass over an iterable of lines and hold only the
parsed output in memory.  Parsed values are plain immutable-by-convention
containers that are safe to share across threads.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .errors import HybridPoolError

logger = logging.getLogger(__name__)

#: provenance tags a qrels entry may carry
PROVENANCE_TAGS = ("human", "llm", "gold")


class ParseError(HybridPoolError):
    """Base class for file-format errors; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class MalformedLine(ParseError):
    pass


class MalformedRecord(ParseError):
    pass


class MissingField(ParseError):
    def __init__(self, name: str, line_no: int | None = None):
        self.name = name
        super().__init__(f"missing field {name!r}", line_no)


class NonNumericRankOrScore(ParseError):
    pass


class InconsistentTag(ParseError):
    pass


class DuplicateDoc(ParseError):
    def __init__(self, topic_id: str, doc_id: str, line_no: int | None = None):
        self.topic_id = topic_id
        self.doc_id = doc_id
        super().__init__(f"duplicate doc {doc_id!r} for topic {topic_id!r}", line_no)


class DuplicateRank(ParseError):
    def __init__(self, topic_id: str, rank: int, line_no: int | None = None):
        self.topic_id = topic_id
        self.rank = rank
        super().__init__(f"duplicate rank {rank} for topic {topic_id!r}", line_no)


class DuplicatePair(ParseError):
    def __init__(self, topic_id: str, doc_id: str, line_no: int | None = None):
        self.topic_id = topic_id
        self.doc_id = doc_id
        super().__init__(f"duplicate pair ({topic_id!r}, {doc_id!r})", line_no)


class DuplicateTopic(ParseError):
    def __init__(self, topic_id: str, line_no: int | None = None):
        self.topic_id = topic_id
        super().__init__(f"duplicate topic {topic_id!r}", line_no)


class DuplicateRunTag(ParseError):
    def __init__(self, run_tag: str):
        self.run_tag = run_tag
        super().__init__(f"run tag {run_tag!r} appears in more than one file")


@dataclass(frozen=True)
class RunEntry:
    doc_id: str
    rank: int
    score: float


@dataclass
class RunSet:
    """Ranked retrieval results: run_tag -> topic_id -> entries sorted by rank."""

    runs: dict[str, dict[str, list[RunEntry]]] = field(default_factory=dict)

    def run_tags(self) -> list[str]:
        return sorted(self.runs)

    def topics(self) -> list[str]:
        seen: set[str] = set()
        for per_topic in self.runs.values():
            seen.update(per_topic)
        return sorted(seen)

    def ranking(self, run_tag: str, topic_id: str) -> list[RunEntry]:
        return self.runs.get(run_tag, {}).get(topic_id, [])

    def merge(self, other: "RunSet") -> None:
        for tag, per_topic in other.runs.items():
            if tag in self.runs:
                raise DuplicateRunTag(tag)
            self.runs[tag] = per_topic


@dataclass
class Qrels:
    """Relevance judgements keyed by (topic_id, doc_id), with provenance."""

    grades: dict[tuple[str, str], int] = field(default_factory=dict)
    provenance: dict[tuple[str, str], str] = field(default_factory=dict)

    def add(self, topic_id: str, doc_id: str, grade: int, source: str) -> None:
        key = (topic_id, doc_id)
        if key in self.grades:
            raise DuplicatePair(topic_id, doc_id)
        if source not in PROVENANCE_TAGS:
            raise ValueError(f"unknown provenance tag {source!r}")
        self.grades[key] = grade
        self.provenance[key] = source

    def __len__(self) -> int:
        return len(self.grades)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self.grades

    def grade(self, topic_id: str, doc_id: str) -> int | None:
        return self.grades.get((topic_id, doc_id))

    def is_relevant(self, topic_id: str, doc_id: str, threshold: int = 1) -> bool:
        """Binary projection: relevant iff grade >= threshold."""
        return self.grades.get((topic_id, doc_id), 0) >= threshold

    def topics(self) -> list[str]:
        return sorted({t for t, _ in self.grades})

    def for_topic(self, topic_id: str) -> dict[str, int]:
        return {d: g for (t, d), g in self.grades.items() if t == topic_id}

    def relevant_docs(self, topic_id: str, threshold: int = 1) -> set[str]:
        return {d for (t, d), g in self.grades.items() if t == topic_id and g >= threshold}

    def restricted_to(self, pairs: Iterable[tuple[str, str]]) -> "Qrels":
        out = Qrels()
        for key in pairs:
            if key in self.grades:
                out.grades[key] = self.grades[key]
                out.provenance[key] = self.provenance[key]
        return out


@dataclass(frozen=True)
class Topic:
    topic_id: str
    query_text: str
    human_narrative: str | None = None


@dataclass
class TopicSet:
    topics: dict[str, Topic] = field(default_factory=dict)

    def __contains__(self, topic_id: str) -> bool:
        return topic_id in self.topics

    def __getitem__(self, topic_id: str) -> Topic:
        return self.topics[topic_id]

    def ids(self) -> list[str]:
        return sorted(self.topics)


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: str | None = None


@dataclass
class Corpus:
    docs: dict[str, Document] = field(default_factory=dict)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.docs

    def __getitem__(self, doc_id: str) -> Document:
        return self.docs[doc_id]

    def __len__(self) -> int:
        return len(self.docs)


def _lines(stream: Iterable[str]) -> Iterator[tuple[int, str]]:
    for line_no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if line:
            yield line_no, line


def parse_run(stream: Iterable[str]) -> RunSet:
    """Parse one run file.

    The run tag (6th column) must be constant within the file; ranks and
    doc_ids must be unique within a topic.  Entries come out sorted by rank.
    """
    run_tag: str | None = None
    per_topic: dict[str, list[RunEntry]] = {}
    seen_docs: dict[str, set[str]] = {}
    seen_ranks: dict[str, set[int]] = {}

    for line_no, line in _lines(stream):
        parts = line.split()
        if len(parts) != 6:
            raise MalformedLine(
                f"expected 6 columns 'topic Q0 doc rank score tag', got {len(parts)}: {line!r}",
                line_no,
            )
        topic_id, _q0, doc_id, rank_str, score_str, tag = parts
        if not topic_id or not doc_id:
            raise MalformedLine("empty topic_id or doc_id", line_no)
        try:
            rank = int(rank_str)
            score = float(score_str)
        except ValueError:
            raise NonNumericRankOrScore(
                f"rank={rank_str!r} score={score_str!r}", line_no
            ) from None
        if rank < 1:
            raise MalformedLine(f"rank must be >= 1, got {rank}", line_no)
        if run_tag is None:
            run_tag = tag
        elif tag != run_tag:
            raise InconsistentTag(f"tag {tag!r} != {run_tag!r}", line_no)

        if doc_id in seen_docs.setdefault(topic_id, set()):
            raise DuplicateDoc(topic_id, doc_id, line_no)
        if rank in seen_ranks.setdefault(topic_id, set()):
            raise DuplicateRank(topic_id, rank, line_no)
        seen_docs[topic_id].add(doc_id)
        seen_ranks[topic_id].add(rank)
        per_topic.setdefault(topic_id, []).append(RunEntry(doc_id, rank, score))

    if run_tag is None:
        raise MalformedLine("empty run file")
    for entries in per_topic.values():
        entries.sort(key=lambda e: e.rank)
    return RunSet(runs={run_tag: per_topic})


def parse_qrels(stream: Iterable[str], source: str = "gold") -> Qrels:
    """Parse a qrels file; negative grades clamp to 0 with a warning."""
    qrels = Qrels()
    for line_no, line in _lines(stream):
        parts = line.split()
        if len(parts) != 4:
            raise MalformedLine(
                f"expected 4 columns 'topic 0 doc grade', got {len(parts)}: {line!r}",
                line_no,
            )
        topic_id, _iter, doc_id, grade_str = parts
        if not topic_id or not doc_id:
            raise MalformedLine("empty topic_id or doc_id", line_no)
        try:
            grade = int(grade_str)
        except ValueError:
            raise MalformedLine(f"non-integer grade {grade_str!r}", line_no) from None
        if grade < 0:
            logger.warning(
                "qrels line %d: negative grade %d for (%s, %s) clamped to 0",
                line_no, grade, topic_id, doc_id,
            )
            grade = 0
        if (topic_id, doc_id) in qrels.grades:
            raise DuplicatePair(topic_id, doc_id, line_no)
        qrels.add(topic_id, doc_id, grade, source)
    return qrels


def write_qrels(qrels: Qrels, stream: IO[str]) -> None:
    """Write qrels sorted by (topic_id, doc_id) for byte-stable output."""
    for (topic_id, doc_id) in sorted(qrels.grades):
        stream.write(f"{topic_id} 0 {doc_id} {qrels.grades[(topic_id, doc_id)]}\n")


def parse_topics(stream: Iterable[str]) -> TopicSet:
    """Parse tab-separated topics: ``topic_id<TAB>query[<TAB>narrative]``."""
    topics: dict[str, Topic] = {}
    for line_no, line in _lines(stream):
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise MalformedRecord(
                f"expected 2 or 3 tab-separated fields, got {len(parts)}", line_no
            )
        topic_id = parts[0].strip()
        query_text = parts[1].strip()
        narrative = parts[2].strip() if len(parts) == 3 and parts[2].strip() else None
        if not topic_id:
            raise MalformedRecord("empty topic_id", line_no)
        if not query_text:
            raise MalformedRecord(f"empty query_text for topic {topic_id!r}", line_no)
        if topic_id in topics:
            raise DuplicateTopic(topic_id, line_no)
        topics[topic_id] = Topic(topic_id, query_text, narrative)
    return TopicSet(topics=topics)


def parse_corpus(stream: Iterable[str], max_doc_chars: int | None = None) -> Corpus:
    """Parse a line-delimited JSON corpus.

    ``max_doc_chars`` truncates document text at parse time, before any
    prompt ever sees it; the default keeps documents intact.
    """
    docs: dict[str, Document] = {}
    for line_no, line in _lines(stream):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"invalid JSON: {exc}", line_no) from None
        if not isinstance(record, dict):
            raise MalformedRecord("record is not an object", line_no)
        for name in ("doc_id", "text"):
            if name not in record:
                raise MissingField(name, line_no)
        doc_id = str(record["doc_id"]).strip()
        text = str(record["text"]).strip()
        if not doc_id:
            raise MalformedRecord("empty doc_id", line_no)
        if not text:
            raise MalformedRecord(f"empty text for doc {doc_id!r}", line_no)
        if doc_id in docs:
            raise DuplicateDoc("<corpus>", doc_id, line_no)
        if max_doc_chars is not None and len(text) > max_doc_chars:
            text = text[:max_doc_chars]
        title = record.get("title")
        docs[doc_id] = Document(doc_id, text, str(title) if title is not None else None)
    return Corpus(docs=docs)


def load_runs_dir(paths: Iterable[str]) -> RunSet:
    """Parse several run files into one RunSet; tags must not collide."""
    runset = RunSet()
    for path in sorted(str(p) for p in paths):
        with open(path, encoding="utf-8") as fh:
            single = parse_run(fh)
        runset.merge(single)
    return runset
