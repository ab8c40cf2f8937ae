"""Stochastic landmark dynamics: simulation, moment matching, bridges, EM."""

__version__ = "0.1.0"
