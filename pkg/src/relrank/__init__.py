"""relrank: BM25 candidate retrieval plus trainable neural re-rankers."""

__version__ = "0.1.0"
