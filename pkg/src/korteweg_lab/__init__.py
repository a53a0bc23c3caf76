"""Pseudo-spectral Korteweg capillary-fluid laboratory."""
__version__ = "0.1.0"
