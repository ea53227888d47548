"""Rotor/spin-wave simulation and optimal control of spin squeezing in 2D XX models."""

__version__ = "0.1.0"
