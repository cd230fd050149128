"""Desk-scale laboratory for routed mixture-of-transformers training dynamics."""

__version__ = "0.1.0"
