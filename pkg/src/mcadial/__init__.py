"""Modular co-attention models for visual dialog answer ranking."""

__version__ = "0.1.0"
