"""Simulation and analysis tools for a random Hamilton-Jacobi control problem."""

__version__ = "0.1.0"
