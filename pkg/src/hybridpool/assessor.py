"""Prompt construction and automatic relevance judging.

Four judging strategies over a shared binary-label protocol:

- zero-shot: query + document only;
- in-context examples: labeled (query, document, answer) examples drawn from
  the already-collected human judgements for the same topic;
- narrative: a stored, topic-specific relevance summary plus judging
  instructions, produced once per (topic, variant) by an instructor model
  from the human-judged documents (or taken verbatim from a human-written
  topic narrative);
- narrative + examples: both of the above in one prompt; with zero examples
  it degenerates byte-for-byte to the plain narrative prompt.

All prompt wording lives in template files (see the prompts/ data
directory); this module only assembles them.  Judging a batch of
(topic, document) pairs is deterministic for a fixed seed: pairs are
processed grouped by topic in sorted order, example selection is keyed by
(seed, topic, document), and records land in an append-only log in sorted
order, so an interrupted batch resumes to byte-identical artifacts.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from hashlib import sha256
from importlib import resources
from pathlib import Path
from string import Template
from typing import Callable, Iterable

from .errors import ConfigError, HybridPoolError, MissingDocText
from .gateway import (
    NEGATIVE_LABEL,
    POSITIVE_LABEL,
    BINARY_LABELS,
    Gateway,
    GatewayError,
    PromptRequest,
    audit_header,
)
from .rng import Stream
from .trec_io import Corpus, Document, Qrels, Topic, TopicSet

logger = logging.getLogger(__name__)

DEFAULT_CONTEXT_BUDGET = 24_000
DEFAULT_MAX_SHOTS = 3
TRUNCATION_MARKER = " [...]"

STRATEGY_KINDS = (
    "zero_shot",
    "icl_random",
    "icl_relevant",
    "icl_nonrelevant",
    "rcl",
    "ricl_random",
    "ricl_relevant",
    "ricl_nonrelevant",
)
NARRATIVE_VARIANTS = ("all_judged", "relevant_only", "nonrelevant_only", "human_trec")

TEMPLATE_NAMES = (
    "zero_shot",
    "icl",
    "rcl",
    "ricl",
    "example_block",
    "instructor_all",
    "instructor_relevant",
    "instructor_nonrelevant",
    "default_judging_instructions",
)

_INSTRUCTOR_TEMPLATE = {
    "all_judged": "instructor_all",
    "relevant_only": "instructor_relevant",
    "nonrelevant_only": "instructor_nonrelevant",
}


class UnknownStrategy(HybridPoolError):
    pass


class InvalidShots(HybridPoolError):
    pass


class NoJudgementsForTopic(HybridPoolError):
    def __init__(self, topic_id: str):
        self.topic_id = topic_id
        super().__init__(f"no human judgements available for topic {topic_id!r}")


class TopicMismatch(HybridPoolError):
    pass


class ContextBudgetExceeded(HybridPoolError):
    def __init__(self, estimated: int, budget: int):
        self.estimated = estimated
        self.budget = budget
        super().__init__(f"prompt needs ~{estimated} chars, budget is {budget}")


class NarrativeEvidenceEmpty(HybridPoolError):
    def __init__(self, topic_id: str, variant: str):
        self.topic_id = topic_id
        self.variant = variant
        super().__init__(f"no evidence for variant {variant!r} on topic {topic_id!r}")


class MalformedNarrativeReply(HybridPoolError):
    def __init__(self, raw_text: str):
        self.raw_text = raw_text
        super().__init__(f"instructor reply lacks NARRATIVE/INSTRUCTIONS sections: {raw_text[:200]!r}")


@dataclass(frozen=True)
class Strategy:
    """A judging strategy: kind, number of examples, narrative variant."""

    kind: str
    shots: int = 0
    narrative_variant: str = "relevant_only"

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise UnknownStrategy(f"unknown strategy kind {self.kind!r}")
        if self.narrative_variant not in NARRATIVE_VARIANTS:
            raise UnknownStrategy(f"unknown narrative variant {self.narrative_variant!r}")
        if self.kind.startswith("icl_"):
            if self.shots < 1:
                raise InvalidShots(f"{self.kind} needs shots >= 1, got {self.shots}")
        elif self.kind.startswith("ricl_"):
            if self.shots < 0:
                raise InvalidShots(f"{self.kind} needs shots >= 0, got {self.shots}")
        elif self.shots != 0:
            raise InvalidShots(f"{self.kind} takes no examples, got shots={self.shots}")

    @property
    def uses_examples(self) -> bool:
        return self.kind.startswith(("icl_", "ricl_"))

    @property
    def uses_narrative(self) -> bool:
        return self.kind == "rcl" or self.kind.startswith("ricl_")

    @property
    def selection(self) -> str:
        if not self.uses_examples:
            return "random"
        return self.kind.split("_", 1)[1]

    def descriptor(self) -> str:
        parts = [self.kind]
        if self.uses_examples:
            parts.append(str(self.shots))
        if self.uses_narrative:
            parts.append(self.narrative_variant)
        return ":".join(parts)

    @staticmethod
    def parse(text: str, max_shots: int = DEFAULT_MAX_SHOTS) -> "Strategy":
        """Parse a descriptor like ``icl_relevant:2`` or ``ricl_random:2:all_judged``.

        Omitted fields take defaults (1 shot for example strategies,
        relevant_only narrative).  Shots above ``max_shots`` are rejected.
        """
        fields = text.strip().split(":")
        kind = fields[0]
        if kind not in STRATEGY_KINDS:
            raise UnknownStrategy(f"unknown strategy {text!r}")
        shots = 0
        variant = "relevant_only"
        rest = fields[1:]
        if kind.startswith(("icl_", "ricl_")):
            shots = 1
            if rest:
                try:
                    shots = int(rest[0])
                except ValueError:
                    raise InvalidShots(f"bad shot count in {text!r}") from None
                rest = rest[1:]
        if kind == "rcl" or kind.startswith("ricl_"):
            if rest:
                variant = rest[0]
                rest = rest[1:]
        if rest:
            raise UnknownStrategy(f"trailing fields in strategy {text!r}")
        if shots > max_shots:
            raise InvalidShots(f"shots={shots} above limit {max_shots}")
        return Strategy(kind=kind, shots=shots, narrative_variant=variant)


@dataclass(frozen=True)
class Example:
    doc_id: str
    doc_text: str
    label: int


@dataclass(frozen=True)
class ExampleSet:
    topic_id: str
    examples: tuple[Example, ...]
    flags: tuple[str, ...] = ()


def select_examples(
    human_qrels: Qrels,
    corpus: Corpus,
    topic_id: str,
    shots: int,
    selection: str = "random",
    seed: int = 0,
    exclude_doc: str | None = None,
    relevance_threshold: int = 1,
) -> ExampleSet:
    """Draw example documents for a topic from its human judgements.

    ``selection`` restricts candidates to one relevance class (``relevant``
    or ``nonrelevant``) or uses all judged docs (``random``).  An empty class
    falls back to all judged docs (flag ``fallback_all_judged``); fewer
    candidates than ``shots`` returns them all (flag ``short_examples``).
    The draw is keyed by (seed, topic, excluded doc), so resampling per
    judged pair is the default and passing ``exclude_doc=None`` yields one
    fixed draw per topic.
    """
    if selection not in ("random", "relevant", "nonrelevant"):
        raise UnknownStrategy(f"unknown example selection {selection!r}")
    if shots < 1:
        raise InvalidShots(f"example selection needs shots >= 1, got {shots}")
    judged = human_qrels.for_topic(topic_id)
    judged.pop(exclude_doc, None)
    if not judged:
        raise NoJudgementsForTopic(topic_id)
    flags: list[str] = []
    if selection == "relevant":
        candidates = sorted(d for d, g in judged.items() if g >= relevance_threshold)
    elif selection == "nonrelevant":
        candidates = sorted(d for d, g in judged.items() if g < relevance_threshold)
    else:
        candidates = sorted(judged)
    if not candidates:
        candidates = sorted(judged)
        flags.append("fallback_all_judged")
    if len(candidates) < shots:
        flags.append("short_examples")
    stream = Stream(seed, "examples", topic_id, exclude_doc)
    chosen = stream.sample_without_replacement(candidates, shots)
    examples = []
    for doc_id in chosen:
        if doc_id not in corpus:
            raise MissingDocText(doc_id)
        label = 1 if judged[doc_id] >= relevance_threshold else 0
        examples.append(Example(doc_id=doc_id, doc_text=corpus[doc_id].text, label=label))
    return ExampleSet(topic_id=topic_id, examples=tuple(examples), flags=tuple(flags))


@dataclass(frozen=True)
class TemplateSet:
    """Named prompt templates with ``${placeholder}`` substitution."""

    templates: dict[str, str]

    @staticmethod
    def load(directory: str | Path | None = None) -> "TemplateSet":
        """Load the template files, from ``directory`` or the packaged set."""
        loaded: dict[str, str] = {}
        for name in TEMPLATE_NAMES:
            if directory is not None:
                text = (Path(directory) / f"{name}.txt").read_text(encoding="utf-8")
            else:
                text = (
                    resources.files("hybridpool") / "prompts" / f"{name}.txt"
                ).read_text(encoding="utf-8")
            loaded[name] = text
        return TemplateSet(templates=loaded)

    def render(self, name: str, **substitutions: str) -> str:
        try:
            return Template(self.templates[name]).substitute(substitutions)
        except KeyError as exc:
            raise ConfigError(f"template {name!r} needs placeholder {exc}") from None


def _fit_texts(
    fixed_chars: int, texts: dict[str, str], budget: int
) -> tuple[dict[str, str], tuple[str, ...]]:
    """Cap substitutable texts so the rendered prompt fits the char budget.

    Exact because every text is substituted exactly once, so the final
    length is fixed_chars + sum of text lengths.  All texts above the
    computed cap are cut to it (longest components lose the most), with a
    marker appended.
    """
    total = fixed_chars + sum(len(t) for t in texts.values())
    if total <= budget:
        return dict(texts), ()
    available = budget - fixed_chars
    if available <= 0 or not texts:
        raise ContextBudgetExceeded(estimated=total, budget=budget)
    lengths = sorted(len(t) for t in texts.values())
    kept = 0
    cap = 0
    for i, length in enumerate(lengths):
        candidate = (available - kept) // (len(lengths) - i)
        if candidate < length:
            cap = candidate
            break
        kept += length
        cap = length
    if cap <= 0:
        raise ContextBudgetExceeded(estimated=total, budget=budget)
    fitted: dict[str, str] = {}
    truncated: list[str] = []
    for slot, text in texts.items():
        if len(text) > cap:
            keep = max(cap - len(TRUNCATION_MARKER), 0)
            fitted[slot] = text[:keep] + TRUNCATION_MARKER[: cap - keep]
            truncated.append(slot)
        else:
            fitted[slot] = text
    return fitted, tuple(sorted(truncated))


def _render_with_budget(
    render: Callable[[dict[str, str]], str],
    texts: dict[str, str],
    budget: int,
    target_slot: str | None = "document",
) -> tuple[str, tuple[str, ...]]:
    if target_slot is not None and len(texts.get(target_slot, "")) > budget:
        raise ContextBudgetExceeded(estimated=len(texts[target_slot]), budget=budget)
    fixed = len(render({slot: "" for slot in texts}))
    fitted, truncated = _fit_texts(fixed, texts, budget)
    return render(fitted), truncated


def _judge_request(user_text: str, truncated: tuple[str, ...]) -> PromptRequest:
    return PromptRequest(
        system_text="",
        user_text=user_text,
        max_output_tokens=8,
        temperature=0.0,
        constraint=BINARY_LABELS,
        truncated_sources=truncated,
    )


def build_icl_prompt(
    topic: Topic,
    document: Document,
    examples: ExampleSet | None,
    templates: TemplateSet,
    budget: int = DEFAULT_CONTEXT_BUDGET,
) -> PromptRequest:
    """Example-conditioned judging prompt; no examples means zero-shot."""
    audit = audit_header("judge", topic=topic.topic_id, doc=document.doc_id)
    if examples is not None and examples.topic_id != topic.topic_id:
        raise TopicMismatch(
            f"examples for topic {examples.topic_id!r} used on {topic.topic_id!r}"
        )
    items = examples.examples if examples is not None else ()
    if not items:
        def render(texts: dict[str, str]) -> str:
            return templates.render(
                "zero_shot",
                audit=audit,
                query=topic.query_text,
                document=texts["document"],
            )

        texts = {"document": document.text}
    else:
        def render(texts: dict[str, str]) -> str:
            blocks = [
                templates.render(
                    "example_block",
                    index=str(i + 1),
                    query=topic.query_text,
                    document=texts[f"example:{i}"],
                    label=POSITIVE_LABEL if ex.label else NEGATIVE_LABEL,
                )
                for i, ex in enumerate(items)
            ]
            return templates.render(
                "icl",
                audit=audit,
                query=topic.query_text,
                examples="\n".join(blocks),
                document=texts["document"],
            )

        texts = {f"example:{i}": ex.doc_text for i, ex in enumerate(items)}
        texts["document"] = document.text
    rendered, truncated = _render_with_budget(render, texts, budget)
    return _judge_request(rendered, truncated)


def build_rcl_prompt(
    topic: Topic,
    document: Document,
    narrative: "RelevanceNarrative",
    templates: TemplateSet,
    budget: int = DEFAULT_CONTEXT_BUDGET,
) -> PromptRequest:
    """Narrative-conditioned judging prompt."""
    if narrative.topic_id != topic.topic_id:
        raise TopicMismatch(
            f"narrative for topic {narrative.topic_id!r} used on {topic.topic_id!r}"
        )
    audit = audit_header("judge", topic=topic.topic_id, doc=document.doc_id)

    def render(texts: dict[str, str]) -> str:
        return templates.render(
            "rcl",
            audit=audit,
            narrative=narrative.narrative_text,
            judging_instructions=narrative.judging_instructions,
            query=topic.query_text,
            document=texts["document"],
        )

    rendered, truncated = _render_with_budget(render, {"document": document.text}, budget)
    return _judge_request(rendered, truncated)


def build_ricl_prompt(
    topic: Topic,
    document: Document,
    narrative: "RelevanceNarrative",
    examples: ExampleSet | None,
    templates: TemplateSet,
    budget: int = DEFAULT_CONTEXT_BUDGET,
) -> PromptRequest:
    """Narrative plus examples; zero examples reduces to the narrative prompt."""
    if examples is None or not examples.examples:
        return build_rcl_prompt(topic, document, narrative, templates, budget)
    if narrative.topic_id != topic.topic_id:
        raise TopicMismatch(
            f"narrative for topic {narrative.topic_id!r} used on {topic.topic_id!r}"
        )
    if examples.topic_id != topic.topic_id:
        raise TopicMismatch(
            f"examples for topic {examples.topic_id!r} used on {topic.topic_id!r}"
        )
    audit = audit_header("judge", topic=topic.topic_id, doc=document.doc_id)
    items = examples.examples

    def render(texts: dict[str, str]) -> str:
        blocks = [
            templates.render(
                "example_block",
                index=str(i + 1),
                query=topic.query_text,
                document=texts[f"example:{i}"],
                label=POSITIVE_LABEL if ex.label else NEGATIVE_LABEL,
            )
            for i, ex in enumerate(items)
        ]
        return templates.render(
            "ricl",
            audit=audit,
            narrative=narrative.narrative_text,
            judging_instructions=narrative.judging_instructions,
            query=topic.query_text,
            examples="\n".join(blocks),
            document=texts["document"],
        )

    texts = {f"example:{i}": ex.doc_text for i, ex in enumerate(items)}
    texts["document"] = document.text
    rendered, truncated = _render_with_budget(render, texts, budget)
    return _judge_request(rendered, truncated)


@dataclass(frozen=True)
class RelevanceNarrative:
    """Stored output of the instructor stage for one (topic, variant)."""

    topic_id: str
    variant: str
    narrative_text: str
    judging_instructions: str
    source_doc_ids: tuple[str, ...]
    backend_id: str
    prompt_hash: str
    created_at: str

    def content_hash(self) -> str:
        material = "\x1f".join(
            (self.topic_id, self.variant, self.narrative_text, self.judging_instructions)
        )
        return sha256(material.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "variant": self.variant,
            "narrative_text": self.narrative_text,
            "judging_instructions": self.judging_instructions,
            "source_doc_ids": list(self.source_doc_ids),
            "backend_id": self.backend_id,
            "prompt_hash": self.prompt_hash,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_dict(record: dict) -> "RelevanceNarrative":
        return RelevanceNarrative(
            topic_id=record["topic_id"],
            variant=record["variant"],
            narrative_text=record["narrative_text"],
            judging_instructions=record["judging_instructions"],
            source_doc_ids=tuple(record["source_doc_ids"]),
            backend_id=record["backend_id"],
            prompt_hash=record["prompt_hash"],
            created_at=record["created_at"],
        )


_NARRATIVE_REPLY_RE = re.compile(
    r"NARRATIVE\s*:\s*(?P<narrative>.*?)\s*INSTRUCTIONS\s*:\s*(?P<instructions>.+)",
    re.IGNORECASE | re.DOTALL,
)

_NARRATIVE_FORMAT_REMINDER = (
    "\n\nYour previous reply did not follow the required format. Respond again "
    "with exactly two sections labeled NARRATIVE: and INSTRUCTIONS:."
)


def parse_narrative_reply(text: str) -> tuple[str, str] | None:
    match = _NARRATIVE_REPLY_RE.search(text)
    if not match:
        return None
    narrative = match.group("narrative").strip()
    instructions = match.group("instructions").strip()
    if not narrative or not instructions:
        return None
    return narrative, instructions


def generate_narrative(
    gateway: Gateway,
    templates: TemplateSet,
    topic: Topic,
    variant: str,
    evidence: Iterable[Example],
    budget: int = DEFAULT_CONTEXT_BUDGET,
    max_output_tokens: int = 1024,
) -> RelevanceNarrative:
    """Produce the relevance narrative for one (topic, variant).

    The human_trec variant copies the topic's human-written narrative and
    needs no model call; the other variants send the variant's evidence
    documents to the instructor model and parse the two-section reply,
    reprompting once on format violations.
    """
    if variant not in NARRATIVE_VARIANTS:
        raise UnknownStrategy(f"unknown narrative variant {variant!r}")
    created_at = datetime.now(timezone.utc).isoformat()
    if variant == "human_trec":
        if not topic.human_narrative:
            raise NarrativeEvidenceEmpty(topic.topic_id, variant)
        return RelevanceNarrative(
            topic_id=topic.topic_id,
            variant=variant,
            narrative_text=topic.human_narrative,
            judging_instructions=templates.render("default_judging_instructions"),
            source_doc_ids=(),
            backend_id="human",
            prompt_hash="",
            created_at=created_at,
        )
    if variant == "relevant_only":
        used = [e for e in evidence if e.label == 1]
    elif variant == "nonrelevant_only":
        used = [e for e in evidence if e.label == 0]
    else:
        used = list(evidence)
    used.sort(key=lambda e: e.doc_id)
    if not used:
        raise NarrativeEvidenceEmpty(topic.topic_id, variant)
    audit = audit_header("narrative", topic=topic.topic_id, variant=variant)

    def render(texts: dict[str, str]) -> str:
        blocks = []
        for example in used:
            if variant == "all_judged":
                label = POSITIVE_LABEL if example.label else NEGATIVE_LABEL
                header = f"Document {example.doc_id} — {label}:"
            else:
                header = f"Document {example.doc_id}:"
            blocks.append(f"{header}\n{texts[f'evidence:{example.doc_id}']}\n")
        return templates.render(
            _INSTRUCTOR_TEMPLATE[variant],
            audit=audit,
            query=topic.query_text,
            judged_docs="\n".join(blocks),
        )

    texts = {f"evidence:{e.doc_id}": e.doc_text for e in used}
    rendered, _ = _render_with_budget(render, texts, budget, target_slot=None)
    request = PromptRequest(
        system_text="", user_text=rendered, max_output_tokens=max_output_tokens
    )
    completion = gateway.complete(request)
    parsed = parse_narrative_reply(completion.text)
    if parsed is None:
        retry = PromptRequest(
            system_text="",
            user_text=rendered + _NARRATIVE_FORMAT_REMINDER,
            max_output_tokens=max_output_tokens,
        )
        completion = gateway.complete(retry)
        parsed = parse_narrative_reply(completion.text)
        if parsed is None:
            raise MalformedNarrativeReply(completion.text)
    narrative_text, judging_instructions = parsed
    return RelevanceNarrative(
        topic_id=topic.topic_id,
        variant=variant,
        narrative_text=narrative_text,
        judging_instructions=judging_instructions,
        source_doc_ids=tuple(e.doc_id for e in used),
        backend_id=completion.backend_id,
        prompt_hash=completion.prompt_hash,
        created_at=created_at,
    )


class NarrativeStore:
    """Append-only JSONL store of narratives, keyed by (topic, variant).

    Generation happens at most once per key per store file: reruns reuse the
    stored record.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[tuple[str, str], RelevanceNarrative] = {}
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    record = RelevanceNarrative.from_dict(json.loads(line))
                    self._records[(record.topic_id, record.variant)] = record

    def __len__(self) -> int:
        return len(self._records)

    def get(self, topic_id: str, variant: str) -> RelevanceNarrative | None:
        return self._records.get((topic_id, variant))

    def put(self, record: RelevanceNarrative) -> None:
        self._records[(record.topic_id, record.variant)] = record
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    def ensure(
        self, topic_id: str, variant: str,
        factory: Callable[[], RelevanceNarrative],
    ) -> RelevanceNarrative:
        record = self.get(topic_id, variant)
        if record is None:
            record = factory()
            self.put(record)
        return record


@dataclass(frozen=True)
class JudgementRecord:
    """One (topic, document) label with its full derivation context."""

    topic_id: str
    doc_id: str
    label: int
    strategy: str
    flags: tuple[str, ...] = ()
    narrative_hash: str | None = None
    example_doc_ids: tuple[str, ...] | None = None
    provenance: str = "llm"

    def to_json(self) -> str:
        record = {
            "topic_id": self.topic_id,
            "doc_id": self.doc_id,
            "label": self.label,
            "strategy": self.strategy,
            "flags": list(self.flags),
            "narrative_hash": self.narrative_hash,
            "example_doc_ids": (
                list(self.example_doc_ids) if self.example_doc_ids is not None else None
            ),
            "provenance": self.provenance,
        }
        return json.dumps(record, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "JudgementRecord":
        record = json.loads(line)
        return JudgementRecord(
            topic_id=record["topic_id"],
            doc_id=record["doc_id"],
            label=int(record["label"]),
            strategy=record["strategy"],
            flags=tuple(record.get("flags", ())),
            narrative_hash=record.get("narrative_hash"),
            example_doc_ids=(
                tuple(record["example_doc_ids"])
                if record.get("example_doc_ids") is not None
                else None
            ),
            provenance=record.get("provenance", "llm"),
        )


class JudgementLog:
    """Append-only JSONL log of judgement records, safe to resume.

    Loading truncates a partial trailing line (the signature of a killed
    writer) so the next append continues from the last complete record.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._records: dict[tuple[str, str], JudgementRecord] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        raw = self.path.read_bytes()
        if raw and not raw.endswith(b"\n"):
            cut = raw.rfind(b"\n") + 1
            logger.warning(
                "truncating partial trailing line (%d bytes) in %s",
                len(raw) - cut, self.path,
            )
            with self.path.open("r+b") as fh:
                fh.truncate(cut)
            raw = raw[:cut]
        for line in raw.decode("utf-8").splitlines():
            if not line.strip():
                continue
            record = JudgementRecord.from_json(line)
            self._records[(record.topic_id, record.doc_id)] = record

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._records

    def get(self, topic_id: str, doc_id: str) -> JudgementRecord | None:
        return self._records.get((topic_id, doc_id))

    def records(self) -> list[JudgementRecord]:
        return [self._records[key] for key in sorted(self._records)]

    def extend(self, records: Iterable[JudgementRecord]) -> None:
        batch = list(records)
        if not batch:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            for record in batch:
                fh.write(record.to_json() + "\n")
                self._records[(record.topic_id, record.doc_id)] = record


def judge_pairs(
    gateway: Gateway,
    templates: TemplateSet,
    strategy: Strategy,
    pairs: Iterable[tuple[str, str]],
    topics: TopicSet,
    corpus: Corpus,
    human_qrels: Qrels,
    seed: int = 0,
    narrative_store: NarrativeStore | None = None,
    log: JudgementLog | None = None,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
    fixed_examples_per_topic: bool = False,
    relevance_threshold: int = 1,
) -> list[JudgementRecord]:
    """Label every (topic, document) pair under one strategy.

    Pairs are grouped by topic and processed in sorted order; calls within a
    topic run concurrently up to the gateway bound, but records are appended
    to the log sorted, so output artifacts are order-independent and a
    resumed run (same log) skips already-judged pairs and produces
    byte-identical results.  Backend failures that survive retries become
    non-relevant records flagged forced_default instead of aborting.
    """
    by_topic: dict[str, set[str]] = {}
    for topic_id, doc_id in pairs:
        by_topic.setdefault(topic_id, set()).add(doc_id)
    for topic_id in by_topic:
        if topic_id not in topics:
            raise ConfigError(f"pair references unknown topic {topic_id!r}")

    store = narrative_store if narrative_store is not None else NarrativeStore()
    narratives: dict[str, RelevanceNarrative] = {}
    if strategy.uses_narrative:
        for topic_id in sorted(by_topic):
            def factory(topic_id: str = topic_id) -> RelevanceNarrative:
                evidence = _evidence_for_topic(
                    human_qrels, corpus, topic_id, relevance_threshold
                )
                return generate_narrative(
                    gateway, templates, topics[topic_id],
                    strategy.narrative_variant, evidence, budget=context_budget,
                )
            narratives[topic_id] = store.ensure(
                topic_id, strategy.narrative_variant, factory
            )

    results: list[JudgementRecord] = []
    with ThreadPoolExecutor(max_workers=gateway.max_concurrency) as executor:
        for topic_id in sorted(by_topic):
            topic = topics[topic_id]
            narrative = narratives.get(topic_id)
            shared_examples: ExampleSet | None = None
            if strategy.uses_examples and strategy.shots > 0 and fixed_examples_per_topic:
                shared_examples = select_examples(
                    human_qrels, corpus, topic_id, strategy.shots,
                    strategy.selection, seed, exclude_doc=None,
                    relevance_threshold=relevance_threshold,
                )
            topic_records: list[JudgementRecord] = []
            futures = {}
            for doc_id in sorted(by_topic[topic_id]):
                if log is not None and (topic_id, doc_id) in log:
                    topic_records.append(log.get(topic_id, doc_id))
                    continue
                futures[doc_id] = executor.submit(
                    _judge_one,
                    gateway, templates, strategy, topic, doc_id, corpus,
                    human_qrels, seed, narrative, shared_examples,
                    context_budget, relevance_threshold,
                )
            fresh = [futures[doc_id].result() for doc_id in sorted(futures)]
            if log is not None:
                log.extend(fresh)
            topic_records.extend(fresh)
            topic_records.sort(key=lambda r: r.doc_id)
            results.extend(topic_records)
    return results


def _evidence_for_topic(
    human_qrels: Qrels, corpus: Corpus, topic_id: str, relevance_threshold: int
) -> list[Example]:
    judged = human_qrels.for_topic(topic_id)
    evidence = []
    for doc_id in sorted(judged):
        if doc_id not in corpus:
            raise MissingDocText(doc_id)
        label = 1 if judged[doc_id] >= relevance_threshold else 0
        evidence.append(Example(doc_id=doc_id, doc_text=corpus[doc_id].text, label=label))
    return evidence


def _judge_one(
    gateway: Gateway,
    templates: TemplateSet,
    strategy: Strategy,
    topic: Topic,
    doc_id: str,
    corpus: Corpus,
    human_qrels: Qrels,
    seed: int,
    narrative: RelevanceNarrative | None,
    shared_examples: ExampleSet | None,
    context_budget: int,
    relevance_threshold: int,
) -> JudgementRecord:
    if doc_id not in corpus:
        raise MissingDocText(doc_id)
    document = corpus[doc_id]
    examples: ExampleSet | None = None
    flags: list[str] = []
    if strategy.uses_examples and strategy.shots > 0:
        if shared_examples is not None:
            examples = shared_examples
        else:
            examples = select_examples(
                human_qrels, corpus, topic.topic_id, strategy.shots,
                strategy.selection, seed, exclude_doc=doc_id,
                relevance_threshold=relevance_threshold,
            )
        flags.extend(examples.flags)
    if strategy.kind == "zero_shot":
        request = build_icl_prompt(topic, document, None, templates, context_budget)
    elif strategy.kind.startswith("icl_"):
        request = build_icl_prompt(topic, document, examples, templates, context_budget)
    elif strategy.kind == "rcl":
        assert narrative is not None
        request = build_rcl_prompt(topic, document, narrative, templates, context_budget)
    else:
        assert narrative is not None
        request = build_ricl_prompt(
            topic, document, narrative, examples, templates, context_budget
        )
    flags.extend(f"truncated:{slot}" for slot in request.truncated_sources)
    try:
        label = gateway.constrained_judge(request)
        value = label.value
        if label.forced_default:
            flags.append("forced_default")
    except GatewayError as exc:
        logger.warning(
            "backend failed for %s/%s; recording forced default: %s",
            topic.topic_id, doc_id, exc,
        )
        value = 0
        flags.extend(["backend_error", "forced_default"])
    return JudgementRecord(
        topic_id=topic.topic_id,
        doc_id=doc_id,
        label=value,
        strategy=strategy.descriptor(),
        flags=tuple(sorted(set(flags))),
        narrative_hash=narrative.content_hash() if narrative is not None else None,
        example_doc_ids=(
            tuple(e.doc_id for e in examples.examples) if examples is not None else None
        ),
    )


def records_to_qrels(records: Iterable[JudgementRecord]) -> Qrels:
    """Binary qrels from judgement records, provenance as recorded."""
    qrels = Qrels()
    for record in sorted(records, key=lambda r: (r.topic_id, r.doc_id)):
        qrels.add(record.topic_id, record.doc_id, record.label, record.provenance)
    return qrels


def merge_qrels(human: Qrels, llm: Qrels) -> Qrels:
    """Union of the two judgement sets; human wins conflicts (logged)."""
    merged = Qrels()
    for (topic_id, doc_id) in sorted(human.grades):
        merged.add(
            topic_id, doc_id, human.grades[(topic_id, doc_id)],
            human.provenance[(topic_id, doc_id)],
        )
    for (topic_id, doc_id) in sorted(llm.grades):
        if (topic_id, doc_id) in merged:
            if merged.grades[(topic_id, doc_id)] != llm.grades[(topic_id, doc_id)]:
                logger.warning(
                    "conflicting grades for %s/%s; keeping the human grade",
                    topic_id, doc_id,
                )
            continue
        merged.add(
            topic_id, doc_id, llm.grades[(topic_id, doc_id)],
            llm.provenance[(topic_id, doc_id)],
        )
    return merged
