"""Behavioral client embeddings from aggregated transaction tables."""

__version__ = "0.1.0"
