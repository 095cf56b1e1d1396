"""Stopped hypoelliptic Ornstein-Uhlenbeck semigroups: Monte Carlo, gradients, PDE cross-checks."""

__version__ = "0.1.0"
