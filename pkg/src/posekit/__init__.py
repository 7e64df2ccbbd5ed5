"""Geometry, losses, augmentation, evaluation and decoding for single-shot 6D pose
regression with a 9D SVD rotation head."""

__version__ = "0.1.0"
