"""Explicit finite-difference solver for the stopped Kolmogorov equation in 2D.

Solves u_t = (c/2) u_{11} + (A xi) . grad u on {g < r}, u = 0 elsewhere,
u(0, .) = phi, for models whose diffusion acts on the first coordinate only
(C = diag(c, 0)). Second differences are centred; the drift uses upwind
differences chosen by the sign of each drift component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .domain import ConvexDomain
from .errors import InvalidInputError, StabilityError
from .matrixcalc import OUModel

CFL_SAFETY = 0.9


@dataclass
class Mesh2D:
    """Uniform node-centred mesh on [lo_1, hi_1] x [lo_2, hi_2]."""

    lo: tuple
    hi: tuple
    shape: tuple
    dt: float | None = None

    def __post_init__(self):
        if len(self.shape) != 2 or min(self.shape) < 3:
            raise InvalidInputError("mesh needs at least 3 nodes per axis")
        if not all(h > l for l, h in zip(self.lo, self.hi)):
            raise InvalidInputError("mesh bounds must satisfy lo < hi")

    @classmethod
    def for_domain(cls, domain: ConvexDomain, nodes: int = 201, pad: float = 0.02, dt=None) -> "Mesh2D":
        R = domain.bound_radius * (1.0 + pad)
        return cls((-R, -R), (R, R), (nodes, nodes), dt)

    @property
    def axes(self):
        return [np.linspace(self.lo[k], self.hi[k], self.shape[k]) for k in range(2)]

    @property
    def spacing(self):
        return tuple((self.hi[k] - self.lo[k]) / (self.shape[k] - 1) for k in range(2))

    def nodes(self):
        x1, x2 = self.axes
        return np.stack(np.meshgrid(x1, x2, indexing="ij"), axis=-1)

    def interior_mask(self, domain: ConvexDomain) -> np.ndarray:
        """Nodes with g < r; all others carry the Dirichlet value 0."""
        return domain.g(self.nodes()) < domain.r

    def stable_dt(self, model: OUModel) -> float:
        """0.9 / (c/h1^2 + max|b1|/h1 + max|b2|/h2): keeps every stencil weight nonnegative."""
        c = float(model.C[0, 0])
        h1, h2 = self.spacing
        b = self.nodes() @ model.A.T
        rate = c / h1**2 + np.abs(b[..., 0]).max() / h1 + np.abs(b[..., 1]).max() / h2
        return CFL_SAFETY / rate


def _check_model(model: OUModel):
    if model.dim != 2:
        raise InvalidInputError("the PDE solver handles d = 2 only")
    C = model.C
    if abs(C[0, 1]) > 1e-14 or abs(C[1, 1]) > 1e-14 or C[0, 0] <= 0:
        raise InvalidInputError("the PDE solver needs C = diag(c, 0) with c > 0")


def solve_dirichlet_2d(model: OUModel, domain: ConvexDomain, phi, T: float, mesh: Mesh2D) -> dict:
    """u(T, .) on the mesh; returns {'u', 'axes', 'dt', 'steps', 'mask'}.

    Raises :class:`StabilityError` if ``mesh.dt`` exceeds the stable step.
    """
    _check_model(model)
    if not T > 0:
        raise InvalidInputError("T must be > 0")
    h1, h2 = mesh.spacing
    dt_max = mesh.stable_dt(model)
    if mesh.dt is not None and mesh.dt > dt_max:
        raise StabilityError(f"time step {mesh.dt:.3e} exceeds the stable bound {dt_max:.3e}", suggested_dt=dt_max)
    dt0 = dt_max if mesh.dt is None else mesh.dt
    steps = int(np.ceil(T / dt0))
    dt = T / steps
    xi = mesh.nodes()
    mask = mesh.interior_mask(domain)
    c = float(model.C[0, 0])
    b = xi @ model.A.T
    bp1, bm1 = np.maximum(b[..., 0], 0.0), np.maximum(-b[..., 0], 0.0)
    bp2, bm2 = np.maximum(b[..., 1], 0.0), np.maximum(-b[..., 1], 0.0)
    # u^{k+1} = u + dt (diffusion + upwind drift); rim nodes stay 0 (outside the domain)
    wE = dt * (0.5 * c / h1**2 + bp1 / h1)
    wW = dt * (0.5 * c / h1**2 + bm1 / h1)
    wN = dt * bp2 / h2
    wS = dt * bm2 / h2
    wC = 1.0 - wE - wW - wN - wS
    if np.any(wC < -1e-12):
        raise StabilityError("negative stencil weight", suggested_dt=dt_max)
    u = np.where(mask, phi(xi), 0.0)
    inner = (slice(1, -1), slice(1, -1))
    m_in = mask[inner]
    for _ in range(steps):
        new = (wC[inner] * u[inner] + wE[inner] * u[2:, 1:-1] + wW[inner] * u[:-2, 1:-1]
               + wN[inner] * u[1:-1, 2:] + wS[inner] * u[1:-1, :-2])
        u[inner] = np.where(m_in, new, 0.0)
    return {"u": u, "axes": mesh.axes, "dt": dt, "steps": steps, "mask": mask}


def evaluate(solution: dict, points) -> np.ndarray:
    """Bilinear interpolation of u(T, .) at ``points`` (k, 2)."""
    interp = RegularGridInterpolator(tuple(solution["axes"]), solution["u"], method="linear")
    return interp(np.atleast_2d(np.asarray(points, dtype=float)))


def gradient_fd(solution: dict, point, direction, h: float | None = None) -> float:
    """Centred difference of the interpolated solution along ``direction``."""
    if h is None:
        h = 2.0 * max(a[1] - a[0] for a in solution["axes"])
    p = np.asarray(point, dtype=float)
    e = np.asarray(direction, dtype=float)
    vals = evaluate(solution, np.stack([p + h * e, p - h * e]))
    return float((vals[0] - vals[1]) / (2 * h))


def compare_mc_pde(model: OUModel, domain: ConvexDomain, phi, T: float, points, mesh: Mesh2D,
                   m: int, seed: int, level: int = 10, workers: int = 1) -> list:
    """Per point: PDE value, stopped_direct estimate, gap and pass flag (max(3 sigma, 5%))."""
    from .estimators import stopped_direct
    from .pathlaw import DyadicGrid

    sol = solve_dirichlet_2d(model, domain, phi, T, mesh)
    pde_vals = evaluate(sol, points)
    grid = DyadicGrid(T, level)
    rows = []
    for k, p in enumerate(np.atleast_2d(points)):
        mc = stopped_direct(model, domain, phi, p, T, grid, m, seed + k, workers)
        gap = float(pde_vals[k] - mc.mean)
        tol = max(3.0 * mc.stderr, 0.05 * abs(mc.mean))
        rows.append({"x": p.tolist(), "pde": float(pde_vals[k]), "mc": mc.mean, "mc_se": mc.stderr,
                     "gap": gap, "tolerance": tol, "passed": abs(gap) <= tol, "steps": sol["steps"]})
    return rows
