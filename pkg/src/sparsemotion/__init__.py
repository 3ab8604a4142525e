"""Conditional diffusion synthesis of full-body motion from head and wrist tracking."""

__version__ = "0.1.0"
