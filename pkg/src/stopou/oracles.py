"""Closed-form reference values used to check the Monte Carlo estimators."""

import numpy as np
from scipy.special import ndtr

# E[max overshoot] constant of discretely monitored Brownian motion: -zeta(1/2)/sqrt(2 pi)
BGK_BETA = 0.5825971579390106


def brownian_two_sided_survival(a: float, T: float, terms: int = 60) -> float:
    """P(sup_{t<=T} |W_t| <= a) by the reflection (image) series.

    sum_k (-1)^k [Phi((2k+1)a/sqrt T) - Phi((2k-1)a/sqrt T)], k in Z.
    """
    if a <= 0:
        return 0.0
    s = np.sqrt(T)
    k = np.arange(-terms, terms + 1)
    return float(np.sum((-1.0) ** np.abs(k) * (ndtr((2 * k + 1) * a / s) - ndtr((2 * k - 1) * a / s))))


def brownian_two_sided_survival_eigen(a: float, T: float, terms: int = 200) -> float:
    """Same probability from the heat-kernel eigenfunction series (cross-check)."""
    if a <= 0:
        return 0.0
    k = np.arange(terms)
    return float(4 / np.pi * np.sum((-1.0) ** k / (2 * k + 1) * np.exp(-((2 * k + 1) ** 2) * np.pi**2 * T / (8 * a * a))))


def brownian_survival_discrete_approx(a: float, T: float, n_steps: int) -> float:
    """Continuity-corrected survival for monitoring at n_steps equal steps.

    Discrete monitoring behaves like continuous monitoring of a barrier moved
    out by BGK_BETA * sqrt(T / n_steps).
    """
    return brownian_two_sided_survival(a + BGK_BETA * np.sqrt(T / n_steps), T)


def brownian_survival_density(r: float, T: float, h: float = 1e-5) -> float:
    """d/dr P(sup |W| ^2 <= r) = d/dr P(sup |W| <= sqrt r), by central differences of the series."""
    f = lambda s: brownian_two_sided_survival(np.sqrt(s), T)
    return (f(r + h) - f(r - h)) / (2 * h)
