"""Stabilizer-free weak Galerkin finite elements for the stationary Stokes problem."""

__version__ = "1.0.0"
