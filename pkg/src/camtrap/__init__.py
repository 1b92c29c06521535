"""Micro deep-learning stack and camera-trap species identification pipeline."""
__version__ = "0.1.0"
