"""Numerical laboratory for Siegel disks of polynomials and their circle-map models."""

__version__ = "0.1.0"
