"""Multifidelity topology design of an L-bracket for maximum stress and volume."""

__version__ = "0.1.0"
