"""Retrieval-augmented named entity recognition for Classical Chinese."""

__version__ = "0.1.0"
