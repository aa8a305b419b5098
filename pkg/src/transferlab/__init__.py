"""Ulam discretisation, ergodic decomposition and class probes for
annealed transfer operators of random maps on [0, 1]."""

__version__ = "0.1.0"
