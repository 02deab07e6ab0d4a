"""Desk-scale spectral toolkit for quasilinear Schrodinger flows."""

__version__ = "0.1.0"
