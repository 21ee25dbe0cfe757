"""Gated-unit simplification toolkit for hierarchical recurrent models."""

__version__ = "0.1.0"
