"""Precomputed-embedding exporter for the MTSS container format."""

__version__ = "0.1.0"
