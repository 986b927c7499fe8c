"""Free-boundary axisymmetric vortex model solved in dual (momentum) space."""

__version__ = "0.1.0"
