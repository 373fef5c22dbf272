"""Numerical laboratory for quantitative unique continuation of the planar Lamé system."""

__version__ = "0.1.0"
