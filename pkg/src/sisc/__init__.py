"""Shift-invariant sparse coding: exact coefficient solving, Fourier-domain basis learning,
and self-taught audio classification features."""

__version__ = "0.1.0"
