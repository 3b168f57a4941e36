"""Hierarchical scene parsing: pixel labeling, recursive region merging with
inter-region relations, and weakly supervised EM training driven by semantic
trees extracted from image descriptions."""

__version__ = "0.1.0"
