"""Desk-scale lab for the pinned 3D Ginzburg-Landau model."""

__version__ = "0.1.0"
