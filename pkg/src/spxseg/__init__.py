"""Superpixel-sampled semantic segmentation engine."""

__version__ = "0.1.0"
