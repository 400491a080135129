"""Hybrid human/automatic relevance judging for retrieval test collections.

Humans judge a shallow, high-value slice of each topic's document pool; a
language-model backend judges the deep remainder; the merged judgement set
is then evaluated for how faithfully it reproduces reference-based retrieval
conclusions (per-topic agreement, significance decisions, and their
preservation).
"""

from __future__ import annotations

from .errors import ConfigError, HybridPoolError, MissingDocText

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "HybridPoolError",
    "MissingDocText",
    "__version__",
]
