"""Multi-level, multi-modal long-term action anticipation on synthetic corpora."""

__version__ = "0.1.0"
