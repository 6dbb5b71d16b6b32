"""Receding-horizon control of stochastic broadcast on directed networks."""

__version__ = "0.1.0"
