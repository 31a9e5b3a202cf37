"""Spatially inhomogeneous coagulation-fragmentation systems, truncated to finitely many sizes."""

__version__ = "0.1.0"
