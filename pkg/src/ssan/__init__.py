"""Selective self-attention networks at desk scale."""

__version__ = "0.1.0"
