"""Goodness-of-fit testing for model-based clustering."""

__version__ = "0.1.0"
