"""Ratio-variance regularized policy optimization in plain numpy."""

__version__ = "0.1.0"
