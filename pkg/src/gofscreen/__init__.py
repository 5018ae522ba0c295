"""Goodness-of-fit screening with decomposed likelihood scores."""

__version__ = "0.1.0"
