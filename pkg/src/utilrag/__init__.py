"""Utility-aware retrieval-augmented QA at desk scale."""

__version__ = "0.1.0"
