"""Sliced supersymmetric Langevin processes: simulation, determinants and checks."""

__version__ = "0.1.0"
