"""Explanation benchmark on synthetic data with known ground truth."""

__version__ = "0.1.0"
