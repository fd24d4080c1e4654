"""Numerical toolkit for the Grushin metric and its conformal geometry."""
from .chart import CartesianPoint, CylindricalPoint, GrushinParams, TangentVector

__all__ = ["CartesianPoint", "CylindricalPoint", "GrushinParams", "TangentVector"]
__version__ = "0.1.0"
