"""Sparse strided self-attention for manipulation localization."""

__version__ = "0.1.0"
