"""Dynamical-systems imitation learning for image-based visual servoing."""
__version__ = "0.1.0"
