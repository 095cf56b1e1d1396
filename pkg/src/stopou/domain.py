"""Convex domains {g <= r}, the running gauge maximum and its path derivative.

Paths are arrays of shape (N, d) or (m, N, d) holding h(t_1..t_N); the j = 0
grid point is supplied separately as the exact initial state (h(0) = 0 and
d(x, 0) = x, so the j = 0 state is x).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._backend import kernels
from .errors import DomainError, InvalidInputError


@dataclass(frozen=True)
class ConvexDomain:
    """Closed sublevel set {g <= r} of a convex C^1 gauge with g(0) = 0.

    ``g`` and ``g_grad`` act on the last axis. ``growth`` holds (a, b) with
    |g(x)| + |g'(x)| <= a + exp(b |x|). ``bound_radius`` is a radius R with
    {g <= r} inside the ball |x| < R. ``quad_matrix`` is set when
    g(x) = x^T M x, which enables the compiled path kernels.
    """

    name: str
    g: Callable
    g_grad: Callable
    r: float
    growth: tuple
    bound_radius: float
    dim: int | None = None
    quad_matrix: np.ndarray | None = None

    def __post_init__(self):
        if not (np.isfinite(self.r) and self.r > 0):
            raise InvalidInputError(f"level r must be > 0, got {self.r}")
        a, b = self.growth
        if a <= 0 or b <= 0:
            raise InvalidInputError("growth constants must be positive")

    def contains(self, x) -> bool:
        return bool(self.g(np.asarray(x, dtype=float)) <= self.r)

    def require_inside(self, x) -> None:
        x = np.asarray(x, dtype=float)
        val = float(self.g(x))
        if val > self.r:
            raise DomainError(f"state {x.tolist()} is outside the closed domain (g = {val:.6g} > r = {self.r})")

    @property
    def grad_sup(self) -> float:
        """Upper bound for |g'| on {g <= r} from the growth constants."""
        a, b = self.growth
        return a + float(np.exp(b * self.bound_radius))


def make_ball_domain(r: float, d: int | None = None) -> ConvexDomain:
    """g(x) = |x|^2; growth (1, 2) since s^2 + 2s <= 1 + e^{2s}."""
    return ConvexDomain(
        name="ball",
        g=lambda x: np.sum(np.square(x), axis=-1),
        g_grad=lambda x: 2.0 * np.asarray(x, dtype=float),
        r=float(r),
        growth=(1.0, 2.0),
        bound_radius=float(np.sqrt(r)) * (1.0 + 1e-9),
        dim=d,
        quad_matrix=None if d is None else np.eye(d),
    )


def make_ellipsoid_domain(r: float, M) -> ConvexDomain:
    """g(x) = x^T M x with M symmetric positive definite."""
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError("ellipsoid matrix must be square")
    if np.max(np.abs(M - M.T)) > 1e-12 * max(1.0, np.max(np.abs(M))):
        raise InvalidInputError("ellipsoid matrix must be symmetric")
    lam = np.linalg.eigvalsh(M)
    if lam[0] <= 0:
        raise InvalidInputError("ellipsoid matrix must be positive definite")
    M = 0.5 * (M + M.T)
    M.setflags(write=False)
    lmax = float(lam[-1])
    return ConvexDomain(
        name="ellipsoid",
        g=lambda x: np.einsum("...i,ij,...j->...", x, M, x),
        g_grad=lambda x: 2.0 * np.asarray(x, dtype=float) @ M,
        r=float(r),
        # lmax (s^2 + 2s) <= 3 lmax + max(1, lmax)^s e^{2s}
        growth=(3.0 * lmax, 2.0 + float(np.log(max(1.0, lmax)))),
        bound_radius=float(np.sqrt(r / lam[0])) * (1.0 + 1e-9),
        dim=M.shape[0],
        quad_matrix=M,
    )


def make_domain(name: str, r: float, d: int, M=None) -> ConvexDomain:
    if name == "ball":
        return make_ball_domain(r, d)
    if name == "ellipsoid":
        if M is None:
            raise InvalidInputError("ellipsoid domain needs its matrix")
        dom = make_ellipsoid_domain(r, M)
        if dom.dim != d:
            raise InvalidInputError(f"ellipsoid matrix is {dom.dim}x{dom.dim}, model dimension is {d}")
        return dom
    raise InvalidInputError(f"unknown domain {name!r} (expected 'ball' or 'ellipsoid')")


def _states(path, shift):
    return np.asarray(path, dtype=float) + np.asarray(shift, dtype=float)


def gauge_values(domain: ConvexDomain, path, shift, x0_value):
    """g at j = 0..N; shape (..., N+1)."""
    k = _states(path, shift)
    g0 = np.asarray(domain.g(np.asarray(x0_value, dtype=float)), dtype=float)
    gj = domain.g(k)
    g0 = np.broadcast_to(g0, gj.shape[:-1])
    return np.concatenate([g0[..., None], gj], axis=-1)


def gamma_argmax(domain: ConvexDomain, path, shift, x0_value):
    """(Gamma_n, j*) with j* in 0..N, first maximizer on ties."""
    path = np.asarray(path, dtype=float)
    if domain.quad_matrix is not None and path.ndim == 3:
        shift = np.ascontiguousarray(np.broadcast_to(shift, path.shape[1:]), dtype=float)
        gam, jstar = kernels().gauge_max_quadratic(np.ascontiguousarray(path), shift, np.ascontiguousarray(domain.quad_matrix))
        g0 = float(domain.g(np.asarray(x0_value, dtype=float)))
        at0 = g0 >= gam
        return np.where(at0, g0, gam), np.where(at0, 0, jstar)
    vals = gauge_values(domain, path, shift, x0_value)
    j = np.argmax(vals, axis=-1)
    return np.take_along_axis(vals, j[..., None], axis=-1)[..., 0], j


def gamma_sup(domain: ConvexDomain, path, shift, x0_value):
    """Gamma_n = max_{j=0..N} g(h(t_j) + d(x, t_j))."""
    return gamma_argmax(domain, path, shift, x0_value)[0]


def gamma_grad_dir(domain: ConvexDomain, path, shift, x0_value, direction, direction0=None):
    """Derivative of Gamma_n along a path direction: g'(k(t_{j*})) . direction(t_{j*}).

    ``direction0`` is the direction at t_0 (zero by default, since h(0) = 0).
    """
    path = np.asarray(path, dtype=float)
    direction = np.asarray(direction, dtype=float)
    _, j = gamma_argmax(domain, path, shift, x0_value)
    k = _states(path, shift)
    N = k.shape[-2]
    d0 = np.zeros(k.shape[-1]) if direction0 is None else np.asarray(direction0, dtype=float)
    x0 = np.asarray(x0_value, dtype=float)
    if k.ndim == 2:
        if j == 0:
            return float(domain.g_grad(x0) @ d0)
        return float(domain.g_grad(k[j - 1]) @ direction[j - 1])
    rows = np.arange(k.shape[0])
    jj = np.clip(j - 1, 0, N - 1)
    kstar = np.where((j == 0)[:, None], x0[None, :], k[rows, jj])
    dstar = np.where((j == 0)[:, None], d0[None, :], np.broadcast_to(direction, k.shape)[rows, jj])
    return np.sum(domain.g_grad(kstar) * dstar, axis=-1)


def lipschitz_bound(domain: ConvexDomain, k, k1) -> float:
    """Mean-value bound |Gamma_n(k) - Gamma_n(k1)| <= (a + e^{b max(|k|,|k1|)}) |k - k1|_E.

    ``k`` and ``k1`` are full grid states (N+1, d) including t_0.
    """
    a, b = domain.growth
    k = np.asarray(k, dtype=float)
    k1 = np.asarray(k1, dtype=float)
    sup_norm = max(np.linalg.norm(k, axis=-1).max(), np.linalg.norm(k1, axis=-1).max())
    return float((a + np.exp(b * sup_norm)) * np.linalg.norm(k - k1, axis=-1).max())


def validate_domain(domain: ConvexDomain, d: int, samples: int = 2000, seed: int = 0, radius: float = 10.0) -> dict:
    """Sampling checks of the gauge hypotheses; raises :class:`DomainError` on failure.

    Checks g(0) = 0, positivity and non-vanishing gradient away from 0,
    midpoint convexity, the growth bound on |x| <= ``radius``, and that
    g > r on the sphere |x| = bound_radius (so, by convexity, {g <= r} lies
    inside the declared ball).
    """
    rng = np.random.default_rng(seed)
    problems = []
    if abs(float(domain.g(np.zeros(d)))) > 1e-12:
        problems.append("g(0) != 0")
    x = rng.normal(size=(samples, d)) * rng.uniform(0.01, radius, size=(samples, 1)) / np.sqrt(d)
    gx = domain.g(x)
    if np.any(gx <= 0):
        problems.append("g <= 0 at a nonzero state")
    if np.any(np.linalg.norm(domain.g_grad(x), axis=-1) == 0):
        problems.append("g' vanishes at a nonzero state")
    y = rng.normal(size=(samples, d)) * rng.uniform(0.01, radius, size=(samples, 1)) / np.sqrt(d)
    mid = domain.g(0.5 * (x + y))
    if np.any(mid > 0.5 * (gx + domain.g(y)) + 1e-10 * (1 + np.abs(gx))):
        problems.append("midpoint convexity fails")
    a, b = domain.growth
    lhs = np.abs(gx) + np.linalg.norm(domain.g_grad(x), axis=-1)
    if np.any(lhs > a + np.exp(b * np.linalg.norm(x, axis=-1))):
        problems.append("growth bound |g| + |g'| <= a + exp(b|x|) fails")
    sphere = rng.normal(size=(samples, d))
    sphere *= domain.bound_radius / np.linalg.norm(sphere, axis=-1, keepdims=True)
    if np.any(domain.g(sphere) <= domain.r):
        problems.append("domain is not inside the declared bounding radius")
    eps = 1e-6
    e = rng.normal(size=(d,))
    x1 = x[:5]
    fd = (domain.g(x1 + eps * e) - domain.g(x1 - eps * e)) / (2 * eps)
    an = domain.g_grad(x1) @ e
    if np.any(np.abs(fd - an) > 1e-5 * (1 + np.abs(an))):
        problems.append("g' disagrees with finite differences of g")
    if problems:
        raise DomainError(f"domain '{domain.name}' fails: " + "; ".join(problems))
    return {"samples": samples, "radius": radius, "ok": True}
