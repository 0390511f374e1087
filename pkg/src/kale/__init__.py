"""Artwork captioning with a heterogeneous metadata knowledge graph."""

__version__ = "0.1.0"
