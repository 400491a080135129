"""Experiment configuration: file loading, overrides, validation, snapshot.

Config files are YAML or JSON mappings whose keys match the field names
below.  Command-line overrides are applied on top, and the fully resolved
configuration is archived next to the experiment outputs so every artifact
can be traced back to the exact parameters that produced it.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .assessor import DEFAULT_CONTEXT_BUDGET, Strategy
from .errors import ConfigError

HUMAN_MODES = ("simulate", "service", "file")
HUMAN_SELECTIONS = ("depth_k", "stratified")
METRIC_NAMES = ("ap", "ndcg")


def parse_metric(text: str) -> tuple[str, int]:
    """Parse ``ap@1000`` / ``ndcg@10`` style metric descriptors."""
    name, _, cutoff_text = text.partition("@")
    name = name.strip().lower()
    if name not in METRIC_NAMES:
        raise ConfigError(f"unknown metric {text!r} (expected ap@K or ndcg@K)")
    if not cutoff_text:
        cutoff = 1000 if name == "ap" else 10
    else:
        try:
            cutoff = int(cutoff_text)
        except ValueError:
            raise ConfigError(f"bad metric cutoff in {text!r}") from None
    if cutoff < 1:
        raise ConfigError(f"metric cutoff must be >= 1, got {cutoff}")
    return name, cutoff


@dataclass
class ExperimentConfig:
    # collection inputs
    runs_dir: str = "runs"
    corpus: str = "corpus.jsonl"
    topics: str = "topics.tsv"
    gold_qrels: str | None = None
    # pooling
    k: int = 10
    k_human: int = 3
    human_mode: str = "simulate"
    human_selection: str = "depth_k"
    stratified_fraction: float = 0.10
    human_file: str | None = None
    # judging strategy
    strategy: str = "zero_shot"
    shots: int = 0
    narrative_variant: str = "relevant_only"
    max_shots: int = 3
    # backend
    backend: str = "mock:faithful"
    base_url: str | None = None
    model: str | None = None
    instructor_model: str | None = None
    request_timeout_s: float = 60.0
    retries: int = 3
    constraint_key: str | None = None
    max_concurrency: int = 8
    # experiment
    seed: int = 0
    alpha: float = 0.05
    metric: str = "ap@1000"
    relevance_threshold: int = 1
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    fixed_examples_per_topic: bool = False
    max_doc_chars: int | None = None
    # outputs
    output_dir: str = "out"
    cache_dir: str | None = None
    templates_dir: str | None = None

    def validate(self) -> None:
        if self.human_mode not in HUMAN_MODES:
            raise ConfigError(f"human_mode must be one of {HUMAN_MODES}, got {self.human_mode!r}")
        if self.human_selection not in HUMAN_SELECTIONS:
            raise ConfigError(
                f"human_selection must be one of {HUMAN_SELECTIONS}, got {self.human_selection!r}"
            )
        if not 1 <= self.k_human < self.k:
            raise ConfigError(f"need 1 <= k_human < k, got k_human={self.k_human}, k={self.k}")
        if self.human_selection == "stratified" and not 0 < self.stratified_fraction <= 1:
            raise ConfigError(
                f"stratified_fraction must be in (0, 1], got {self.stratified_fraction}"
            )
        if self.human_mode == "simulate" and self.gold_qrels is None:
            raise ConfigError("human_mode=simulate needs gold_qrels")
        if self.human_selection == "stratified" and self.gold_qrels is None:
            raise ConfigError("human_selection=stratified needs gold_qrels")
        if self.human_mode == "file" and self.human_file is None:
            raise ConfigError("human_mode=file needs human_file")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.max_concurrency < 1:
            raise ConfigError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if self.context_budget < 1:
            raise ConfigError(f"context_budget must be >= 1, got {self.context_budget}")
        parse_metric(self.metric)
        self.parsed_strategy()  # raises on bad strategy fields
        if self.backend == "http":
            if not self.base_url or not self.model:
                raise ConfigError("backend=http needs base_url and model")
        elif not self.backend.startswith("mock:"):
            raise ConfigError(f"backend must be 'http' or 'mock:...', got {self.backend!r}")

    def parsed_strategy(self) -> Strategy:
        """Strategy object from the strategy/shots/narrative_variant fields.

        The strategy field may itself be a full descriptor
        (``icl_relevant:2``); explicit shots/narrative_variant fields win
        over descriptor defaults but not over descriptor-embedded values.
        """
        if ":" in self.strategy:
            return Strategy.parse(self.strategy, max_shots=self.max_shots)
        kind = self.strategy
        shots = self.shots
        if kind.startswith("icl_") and shots == 0:
            shots = 1
        if shots > self.max_shots:
            raise ConfigError(f"shots={shots} above max_shots={self.max_shots}")
        return Strategy(kind=kind, shots=shots, narrative_variant=self.narrative_variant)

    def resolved_cache_dir(self) -> Path:
        if self.cache_dir is not None:
            return Path(self.cache_dir)
        return Path(self.output_dir) / "cache"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def snapshot(self, path: str | Path) -> None:
        """Archive the resolved configuration as sorted JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


_FIELD_NAMES = {f.name for f in dataclasses.fields(ExperimentConfig)}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a validated config from an optional file plus overrides.

    YAML is detected by extension (.yaml/.yml); anything else is parsed as
    JSON (YAML is a JSON superset, so plain JSON always works).  Unknown
    keys are rejected rather than ignored.
    """
    values: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        values.update(loaded)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(values) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    config = ExperimentConfig(**values)
    config.validate()
    return config
