"""Invariance, equivariance and factor-of-variation measurement for image embeddings."""

__version__ = "0.1.0"
