"""Shared exception base for the toolkit.

Concrete error classes live next to the code that raises them; everything
inherits from :class:`HybridPoolError` so callers can catch broadly.
"""

from __future__ import annotations


class HybridPoolError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(HybridPoolError):
    """Invalid or inconsistent experiment configuration."""


class MissingDocText(HybridPoolError):
    """A pooled document is absent from the corpus."""

    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"document {doc_id!r} has no text in the corpus")
