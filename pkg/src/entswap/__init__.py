"""Simulator of two-source entanglement swapping and teleportation with linear optics."""

__version__ = "0.1.0"
