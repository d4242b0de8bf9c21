"""Markerless AR safety overlay pipeline for stereo robot scenes."""

__version__ = "0.1.0"
