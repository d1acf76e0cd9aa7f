"""Invariant variational calculus on jet spaces reduced by Lie group actions."""

__version__ = "0.1.0"
