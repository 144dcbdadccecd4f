"""Shooting-based steady-state initialization for three-phase EMT simulation."""

__version__ = "0.1.0"
