"""Pixel-wise adversarial domain alignment for few-shot semantic segmentation."""

__version__ = "0.1.0"
