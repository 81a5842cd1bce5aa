"""Benchmarking toolkit for thalamic-nuclei segmentations."""
__version__ = "0.1.0"
