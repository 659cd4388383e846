"""Lesion boundary segmentation: a compact U-Net pipeline in plain numpy."""

__version__ = "0.1.0"
