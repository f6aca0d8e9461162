"""Discrete tent spaces, rough-coefficient parabolic solvers and stochastic heat equations on the torus."""

from .grid import GridSpec, SpaceField, SpaceTimeField, DimensionMismatch

__all__ = ["GridSpec", "SpaceField", "SpaceTimeField", "DimensionMismatch"]
__version__ = "0.1.0"
