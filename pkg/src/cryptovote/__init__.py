"""Ensemble LLM classification of software packages by cryptographic relevance."""

__version__ = "0.1.0"
