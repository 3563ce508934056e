"""Synthetic X-ray projections from MR projections with an edge-weighted conditional GAN."""

__version__ = "0.1.0"
