"""Reconstructing 3D shapes from multi-frame brain-signal images."""

__version__ = "0.1.0"
