"""Frozen-core transfer experiments for small sequence-to-sequence transformers."""

__version__ = "0.1.0"
