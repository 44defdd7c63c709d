"""Differentiable planar rigid-body simulation and short-horizon policy learning."""

__version__ = "0.1.0"
