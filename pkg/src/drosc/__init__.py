"""Distributionally robust programs with stochastic linear complementarity constraints."""

__version__ = "0.1.0"
