"""Simulation and analysis of polarization-entangled photon pairs from a quantum-dot cascade."""

__version__ = "0.1.0"
