"""Uniform interface to a text-generation backend.

Three backends: a remote chat-completions HTTP client, a deterministic mock
oracle for tests and dry runs, and anything else implementing
:class:`Backend`.  The gateway layers on top of a backend:

- content-addressed on-disk caching keyed by a digest of the canonical
  request, so reruns and resumed experiments never repeat a call;
- a bound on concurrent in-flight backend calls;
- constrained binary-label decoding with normalization, one reprompt, and a
  conservative non-relevant fallback.

Callers must never assume completion order; determinism downstream comes
from keying results by (topic_id, doc_id).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol

import requests

from .errors import HybridPoolError
from .rng import Stream
from .trec_io import Qrels

logger = logging.getLogger(__name__)

POSITIVE_LABEL = "Relevant"
NEGATIVE_LABEL = "Not Relevant"
BINARY_LABELS = (POSITIVE_LABEL, NEGATIVE_LABEL)

API_KEY_ENV = "LLM_API_KEY"

_AUDIT_RE = re.compile(r"^#audit:\s*(.+)$", re.MULTILINE)


class GatewayError(HybridPoolError):
    pass


class BackendUnreachable(GatewayError):
    pass


class BackendRejected(GatewayError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"backend rejected request: HTTP {status}: {body[:200]}")


class Timeout(GatewayError):
    pass


class UnparseableAfterRetry(GatewayError):
    def __init__(self, raw_text: str):
        self.raw_text = raw_text
        super().__init__(f"reply not a known label after retry: {raw_text[:200]!r}")


class MissingAuditHeader(GatewayError):
    pass


def _label_token_bound(label: str) -> int:
    # crude upper bound: one token per word plus slack
    return len(label.split()) + 2


@dataclass(frozen=True)
class PromptRequest:
    system_text: str
    user_text: str
    max_output_tokens: int = 512
    temperature: float = 0.0
    constraint: tuple[str, ...] | None = None
    # metadata only; never part of the prompt digest
    truncated_sources: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.constraint is not None:
            bound = max(_label_token_bound(l) for l in self.constraint)
            if self.max_output_tokens < bound:
                raise ValueError(
                    f"max_output_tokens={self.max_output_tokens} below label bound {bound}"
                )


@dataclass(frozen=True)
class Completion:
    text: str
    from_cache: bool
    backend_id: str
    prompt_hash: str


@dataclass(frozen=True)
class BinaryLabel:
    value: int
    raw_text: str
    forced_default: bool = False


def audit_header(kind: str, **fields: str) -> str:
    """Attribution comment embedded in prompts; inert for real backends."""
    parts = " ".join(f"{k}={str(v).replace(' ', '_')}" for k, v in sorted(fields.items()))
    return f"#audit: kind={kind} {parts}".rstrip()


def parse_audit_header(text: str) -> dict[str, str]:
    match = _AUDIT_RE.search(text)
    if not match:
        raise MissingAuditHeader("prompt carries no audit header")
    fields: dict[str, str] = {}
    for token in match.group(1).split():
        if "=" in token:
            key, value = token.split("=", 1)
            fields[key] = value
    if "kind" not in fields:
        raise MissingAuditHeader("audit header carries no kind")
    return fields


class Backend(Protocol):
    backend_id: str
    supports_constraints: bool

    def generate(self, request: PromptRequest) -> str: ...


class HttpChatBackend:
    """Chat-completions client with bounded retries and backoff.

    The bearer token comes from the LLM_API_KEY environment variable; when a
    constraint payload key is configured, label constraints are forwarded
    verbatim under that key.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        timeout_s: float = 60.0,
        retries: int = 3,
        backoff_s: float = 0.5,
        constraint_key: str | None = None,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout_s = timeout_s
        self.retries = retries
        self.backoff_s = backoff_s
        self.constraint_key = constraint_key
        self.supports_constraints = constraint_key is not None
        self.backend_id = f"http:{model}"
        self._session = session or requests.Session()

    def generate(self, request: PromptRequest) -> str:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        payload: dict = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.constraint is not None and self.constraint_key:
            payload[self.constraint_key] = list(request.constraint)
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: GatewayError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                response = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout_s,
                )
            except requests.Timeout:
                last_error = Timeout(f"no reply within {self.timeout_s}s")
                continue
            except requests.ConnectionError as exc:
                last_error = BackendUnreachable(str(exc))
                continue
            if response.status_code in (429,) or response.status_code >= 500:
                last_error = BackendRejected(response.status_code, response.text)
                continue
            if response.status_code != 200:
                raise BackendRejected(response.status_code, response.text)
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, ValueError) as exc:
                raise BackendRejected(200, f"malformed completion body: {exc}") from None
        assert last_error is not None
        raise last_error


MOCK_NARRATIVE_TEMPLATE = (
    "NARRATIVE: Synthetic relevance summary for topic {topic} ({variant} evidence): "
    "a document counts as relevant when it addresses the information need directly.\n"
    "INSTRUCTIONS: Mark a document Relevant when it directly addresses the topic; "
    "otherwise mark it Not Relevant."
)


class MockOracleBackend:
    """Deterministic backend answering from gold labels via the audit header.

    Modes: faithful echoes gold, inverted negates it, noisy flips each pair
    independently with the given probability under a per-pair seeded stream
    (so answers do not depend on call order).  Narrative prompts get a fixed
    template reply.
    """

    def __init__(
        self,
        gold_qrels: Qrels,
        mode: str = "faithful",
        flip_probability: float = 0.0,
        seed: int = 0,
        relevance_threshold: int = 1,
    ):
        if mode not in ("faithful", "inverted", "noisy"):
            raise ValueError(f"unknown mock mode {mode!r}")
        if mode == "noisy" and not 0 <= flip_probability <= 1:
            raise ValueError(f"flip probability {flip_probability} outside [0, 1]")
        self.gold = gold_qrels
        self.mode = mode
        self.flip_probability = flip_probability
        self.seed = seed
        self.relevance_threshold = relevance_threshold
        self.supports_constraints = True
        suffix = f":p={flip_probability}:seed={seed}" if mode == "noisy" else ""
        self.backend_id = f"mock:{mode}{suffix}"

    def generate(self, request: PromptRequest) -> str:
        fields = parse_audit_header(request.user_text)
        kind = fields["kind"]
        if kind == "narrative":
            return MOCK_NARRATIVE_TEMPLATE.format(
                topic=fields.get("topic", "?"), variant=fields.get("variant", "?")
            )
        if kind != "judge":
            raise MissingAuditHeader(f"cannot attribute prompt of kind {kind!r}")
        if "topic" not in fields or "doc" not in fields:
            raise MissingAuditHeader("judge prompt lacks topic/doc attribution")
        topic_id, doc_id = fields["topic"], fields["doc"]
        relevant = self.gold.is_relevant(topic_id, doc_id, self.relevance_threshold)
        if self.mode == "inverted":
            relevant = not relevant
        elif self.mode == "noisy" and self.flip_probability > 0:
            u = Stream(self.seed, "noisy-flip", topic_id, doc_id).uniform()
            if u < self.flip_probability:
                relevant = not relevant
        return POSITIVE_LABEL if relevant else NEGATIVE_LABEL


def mock_oracle(
    gold_qrels: Qrels,
    mode: str,
    flip_probability: float = 0.0,
    seed: int = 0,
    relevance_threshold: int = 1,
) -> MockOracleBackend:
    return MockOracleBackend(
        gold_qrels, mode, flip_probability, seed, relevance_threshold
    )


def prompt_digest(backend_id: str, request: PromptRequest) -> str:
    canonical = json.dumps(
        [
            backend_id,
            request.system_text,
            request.user_text,
            list(request.constraint) if request.constraint is not None else None,
            request.temperature,
        ],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def normalize_reply(text: str) -> str:
    cleaned = text.strip().casefold()
    cleaned = cleaned.strip(".,;:!?\"'()[]*`")
    return " ".join(cleaned.split())


def match_label(text: str, labels: tuple[str, ...]) -> str | None:
    """Prefix-match a normalized reply against the label set, longest first."""
    normalized = normalize_reply(text)
    for label in sorted(labels, key=len, reverse=True):
        if normalized.startswith(normalize_reply(label)):
            return label
    return None


REPROMPT_REMINDER = (
    "\n\nYour previous answer was not a valid label. "
    "Answer with exactly one of: Relevant, Not Relevant."
)


class Gateway:
    """Caching, concurrency-bounded front end over a backend."""

    def __init__(
        self,
        backend: Backend,
        cache_dir: str | Path | None = None,
        max_concurrency: int = 8,
    ):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        self.backend = backend
        self.max_concurrency = max_concurrency
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._inflight = threading.BoundedSemaphore(max_concurrency)

    def prompt_hash(self, request: PromptRequest) -> str:
        return prompt_digest(self.backend.backend_id, request)

    def _cache_path(self, digest: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{digest}.json"

    def complete(self, request: PromptRequest) -> Completion:
        digest = self.prompt_hash(request)
        path = self._cache_path(digest)
        if path is not None and path.exists():
            entry = json.loads(path.read_text(encoding="utf-8"))
            return Completion(
                text=entry["reply"],
                from_cache=True,
                backend_id=self.backend.backend_id,
                prompt_hash=digest,
            )
        with self._inflight:
            text = self.backend.generate(request)
        if path is not None:
            entry = {
                "backend_id": self.backend.backend_id,
                "request": {
                    "system_text": request.system_text,
                    "user_text": request.user_text,
                    "max_output_tokens": request.max_output_tokens,
                    "temperature": request.temperature,
                    "constraint": list(request.constraint)
                    if request.constraint is not None
                    else None,
                },
                "reply": text,
            }
            # atomic per-entry write; concurrent writers race benignly
            fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, path)
        return Completion(
            text=text, from_cache=False, backend_id=self.backend.backend_id,
            prompt_hash=digest,
        )

    def constrained_judge(self, request: PromptRequest) -> BinaryLabel:
        """Binary relevance decision with a conservative fallback.

        Backends that support constrained decoding get the constraint
        forwarded; otherwise the reply is normalized and prefix-matched, one
        reprompt with a label reminder is attempted, and a still-unmatched
        reply defaults to non-relevant with forced_default set.
        """
        if request.constraint is None or set(request.constraint) != set(BINARY_LABELS):
            raise ValueError(f"constraint must be {set(BINARY_LABELS)}")
        completion = self.complete(request)
        label = match_label(completion.text, BINARY_LABELS)
        if label is None:
            retry = replace(request, user_text=request.user_text + REPROMPT_REMINDER)
            completion = self.complete(retry)
            label = match_label(completion.text, BINARY_LABELS)
            if label is None:
                logger.warning(
                    "unparseable reply after reprompt; defaulting to non-relevant: %r",
                    completion.text[:100],
                )
                return BinaryLabel(value=0, raw_text=completion.text, forced_default=True)
        return BinaryLabel(
            value=1 if label == POSITIVE_LABEL else 0, raw_text=completion.text
        )
