"""HTTP service for collecting the human portion of the judgements.

Serves one task at a time per topic from the human-assigned pool slice,
ordered by how early any run retrieved the document.  Submissions land in an
append-only JSONL log that the judging pipeline later consumes; restarting
the service reconstructs its state from that log, and a judgement document
is never handed out twice concurrently thanks to expiring task leases.

API summary (all JSON):

- GET  /api/topics                 topics with per-topic progress
- GET  /api/topics/{id}/next       next unjudged task, or 204 when done
- POST /api/judgements             submit {topic_id, doc_id, label, assessor_id}
- GET  /api/progress               overall and per-topic progress

Submission semantics: unknown topic or document gives 404; a document
outside the human-assigned slice, or a label other than 0/1, gives 422;
resubmitting the same label for the same assessor is idempotent (200, no new
log entry); a different assessor for an already-judged document gives 409; a
changed label from the same assessor appends a correction entry.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, HTTPException, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .config import ExperimentConfig
from .errors import HybridPoolError
from .pooling import Pool, PoolSplit
from .trec_io import Corpus, TopicSet

logger = logging.getLogger(__name__)

DEFAULT_LEASE_SECONDS = 600.0


class BindFailure(HybridPoolError):
    pass


class JudgementSubmission(BaseModel):
    topic_id: str
    doc_id: str
    label: int
    assessor_id: str


@dataclass(frozen=True)
class _Judged:
    label: int
    assessor_id: str


class AssessmentState:
    """Task queue, lease table, and judgement log behind the endpoints."""

    def __init__(
        self,
        pools: dict[str, Pool],
        splits: dict[str, PoolSplit],
        topics: TopicSet,
        corpus: Corpus,
        log_path: str | Path,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.topics = topics
        self.corpus = corpus
        self.log_path = Path(log_path)
        self.lease_seconds = lease_seconds
        self.clock = clock
        self._lock = threading.Lock()
        # per topic: task docs ordered by earliest retrieval rank, then id
        self._tasks: dict[str, list[str]] = {}
        self._pool_docs: dict[str, set[str]] = {}
        for topic_id in sorted(pools):
            pool, split = pools[topic_id], splits[topic_id]
            ordered = sorted(
                split.shallow, key=lambda d: (pool.members[d].min_rank, d)
            )
            self._tasks[topic_id] = ordered
            self._pool_docs[topic_id] = set(pool.members)
        self._judged: dict[tuple[str, str], _Judged] = {}
        self._leases: dict[tuple[str, str], float] = {}
        self._replay_log()

    def _replay_log(self) -> None:
        if not self.log_path.exists():
            return
        with self.log_path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                key = (record["topic_id"], record["doc_id"])
                self._judged[key] = _Judged(
                    label=int(record["label"]),
                    assessor_id=record.get("assessor_id", ""),
                )
        logger.info("replayed %d judgements from %s", len(self._judged), self.log_path)

    def _append(self, topic_id: str, doc_id: str, label: int, assessor_id: str) -> None:
        line = json.dumps(
            {
                "topic_id": topic_id,
                "doc_id": doc_id,
                "label": label,
                "strategy": "human",
                "provenance": "human",
                "flags": [],
                "assessor_id": assessor_id,
                "submitted_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            },
            sort_keys=True,
        )
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def _topic_progress(self, topic_id: str) -> tuple[int, int]:
        tasks = self._tasks[topic_id]
        judged = sum(1 for d in tasks if (topic_id, d) in self._judged)
        return judged, len(tasks)

    def topics_overview(self) -> list[dict]:
        with self._lock:
            overview = []
            for topic_id in sorted(self._tasks):
                judged, total = self._topic_progress(topic_id)
                overview.append(
                    {
                        "topic_id": topic_id,
                        "query_text": self.topics[topic_id].query_text
                        if topic_id in self.topics
                        else "",
                        "judged": judged,
                        "total": total,
                    }
                )
            return overview

    def next_task(self, topic_id: str) -> dict | None:
        with self._lock:
            if topic_id not in self._tasks:
                raise HTTPException(status_code=404, detail=f"unknown topic {topic_id!r}")
            now = self.clock()
            tasks = self._tasks[topic_id]
            for position, doc_id in enumerate(tasks, start=1):
                key = (topic_id, doc_id)
                if key in self._judged:
                    continue
                if self._leases.get(key, 0.0) > now:
                    continue
                self._leases[key] = now + self.lease_seconds
                task = {
                    "topic_id": topic_id,
                    "doc_id": doc_id,
                    "query_text": self.topics[topic_id].query_text
                    if topic_id in self.topics
                    else "",
                    "position": position,
                    "total_in_topic": len(tasks),
                    "doc_title": "",
                    "doc_text": "",
                    "error": None,
                }
                if doc_id in self.corpus:
                    document = self.corpus[doc_id]
                    task["doc_title"] = document.title or ""
                    task["doc_text"] = document.text
                else:
                    task["error"] = f"document {doc_id!r} has no text in the corpus"
                return task
            return None

    def submit(self, submission: JudgementSubmission) -> dict:
        with self._lock:
            topic_id, doc_id = submission.topic_id, submission.doc_id
            if topic_id not in self._tasks:
                raise HTTPException(status_code=404, detail=f"unknown topic {topic_id!r}")
            if doc_id not in self._pool_docs[topic_id]:
                raise HTTPException(
                    status_code=404,
                    detail=f"document {doc_id!r} is not pooled for topic {topic_id!r}",
                )
            if doc_id not in self._tasks[topic_id]:
                raise HTTPException(
                    status_code=422,
                    detail=f"document {doc_id!r} is not assigned for human review",
                )
            if submission.label not in (0, 1):
                raise HTTPException(
                    status_code=422, detail=f"label must be 0 or 1, got {submission.label}"
                )
            if not submission.assessor_id.strip():
                raise HTTPException(status_code=422, detail="assessor_id must be non-empty")
            key = (topic_id, doc_id)
            existing = self._judged.get(key)
            if existing is not None:
                if existing.assessor_id != submission.assessor_id:
                    raise HTTPException(
                        status_code=409,
                        detail=(
                            f"document already judged by {existing.assessor_id!r}; "
                            "refusing cross-assessor overwrite"
                        ),
                    )
                if existing.label == submission.label:
                    status = "unchanged"
                else:
                    self._append(topic_id, doc_id, submission.label, submission.assessor_id)
                    self._judged[key] = _Judged(submission.label, submission.assessor_id)
                    status = "corrected"
            else:
                self._append(topic_id, doc_id, submission.label, submission.assessor_id)
                self._judged[key] = _Judged(submission.label, submission.assessor_id)
                status = "recorded"
            self._leases.pop(key, None)
            judged, total = self._topic_progress(topic_id)
            return {
                "status": status,
                "topic_id": topic_id,
                "doc_id": doc_id,
                "judged_in_topic": judged,
                "total_in_topic": total,
            }

    def progress(self) -> dict:
        with self._lock:
            per_topic = []
            judged_sum, total_sum = 0, 0
            for topic_id in sorted(self._tasks):
                judged, total = self._topic_progress(topic_id)
                judged_sum += judged
                total_sum += total
                per_topic.append({"topic_id": topic_id, "judged": judged, "total": total})
            return {"judged": judged_sum, "total": total_sum, "per_topic": per_topic}


def create_app(state: AssessmentState, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="relevance review service")

    @app.get("/api/topics")
    def topics() -> list[dict]:
        return state.topics_overview()

    @app.get("/api/topics/{topic_id}/next")
    def next_task(topic_id: str):
        task = state.next_task(topic_id)
        if task is None:
            return Response(status_code=204)
        return task

    @app.post("/api/judgements")
    def submit(submission: JudgementSubmission) -> dict:
        return state.submit(submission)

    @app.get("/api/progress")
    def progress() -> dict:
        return state.progress()

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def build_state(
    config: ExperimentConfig, lease_seconds: float = DEFAULT_LEASE_SECONDS
) -> AssessmentState:
    """Assemble the service state from an experiment configuration."""
    from .pipeline import HUMAN_SERVICE_LOG_NAME, load_collection, pool_stage

    collection = load_collection(config)
    stage = pool_stage(config, collection)
    log_path = (
        Path(config.human_file)
        if config.human_file is not None
        else Path(config.output_dir) / HUMAN_SERVICE_LOG_NAME
    )
    return AssessmentState(
        stage.pools, stage.splits, collection.topics, collection.corpus,
        log_path, lease_seconds=lease_seconds,
    )


def serve(
    config: ExperimentConfig,
    host: str = "127.0.0.1",
    port: int = 8080,
    lease_seconds: float = DEFAULT_LEASE_SECONDS,
    ui_dir: str | None = None,
) -> None:
    """Run the review service until interrupted."""
    import uvicorn

    state = build_state(config, lease_seconds=lease_seconds)
    app = create_app(state, ui_dir=ui_dir)
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    except OSError as exc:
        raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
