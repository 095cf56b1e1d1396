"""Cameron-Martin shift machinery.

Everything here is linear in the base state ``x`` (F is quadratic), so the
work is done once per (model, T) as d x d matrices acting on x:

    u(x, t) = e^{(T-t)A*} W x,            W = U^{-1} e^{TA}
    a(x, t) = int_0^T K(t, s) u(x, s) ds
    d(x, t) = e^{tA} x - a(x, t)
    F(x)    = int_0^T u(x, s) . a(x, s) ds

``a`` is evaluated by composite Gauss-Legendre quadrature of the kernel
action, accepted only when doubling the quadrature level changes it by less
than ``QUAD_RTOL`` (relative).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import AccuracyError, ConsistencyError, InvalidInputError
from .matrixcalc import OUModel, expm, expm_many, gram_Qt_many, gram_U, kernel_K, sup_expm_norm
from .pathlaw import DyadicGrid

GL_NODES = 8
QUAD_MIN_LEVEL = 7
QUAD_RTOL = 1e-8

_XI, _WI = np.polynomial.legendre.leggauss(GL_NODES)
_XI = 0.5 * (_XI + 1.0)
_WI = 0.5 * _WI


class ShiftOperator:
    """Linear maps x -> u(x, t), a(x, t), d(x, t) and the quadratic form of F.

    Parameters
    ----------
    model : OUModel
    T : float
        Horizon.
    quad_level : int, optional
        Dyadic level of the composite Gauss-Legendre rule used for ``a`` and
        ``F``; defaults to ``QUAD_MIN_LEVEL``.
    """

    def __init__(self, model: OUModel, T: float, quad_level: int | None = None):
        if not (np.isfinite(T) and T > 0):
            raise InvalidInputError(f"T must be > 0, got {T}")
        self.model = model
        self.T = float(T)
        self.quad_level = QUAD_MIN_LEVEL if quad_level is None else int(quad_level)
        self.U = gram_U(model, self.T)
        self.U_inv = np.linalg.inv(self.U)
        self.eTA = expm(model.A, self.T)
        self.W = self.U_inv @ self.eTA

    # u ---------------------------------------------------------------
    def u_mat(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self._check_times(ts)
        E = expm_many(self.model.A, self.T - ts)
        return np.swapaxes(E, 1, 2) @ self.W

    # a ---------------------------------------------------------------
    def _cell_integrals(self, level: int):
        """Running integrals I_k = int_0^{c_k} e^{(c_k-s)A} Q_s u(s) ds at cell ends."""
        A = self.model.A
        ncell = 2**level
        h = self.T / ncell
        starts = np.arange(ncell) * h
        nodes = (starts[:, None] + h * _XI[None, :]).ravel()
        Q = gram_Qt_many(self.model, nodes)
        U = self.u_mat(nodes)
        P = expm_many(A, h * (1.0 - _XI))
        f = (Q @ U).reshape(ncell, GL_NODES, *U.shape[1:])
        contrib = h * np.einsum("i,iab,kibc->kac", _WI, P, f)
        step = expm(A, h)
        I = np.zeros((ncell + 1,) + U.shape[1:])
        for k in range(ncell):
            I[k + 1] = step @ I[k] + contrib[k]
        return starts, h, I

    def _a_mat_level(self, ts, level: int) -> np.ndarray:
        A = self.model.A
        starts, h, I = self._cell_integrals(level)
        ncell = starts.size
        k = np.clip(np.floor(ts / h).astype(int), 0, ncell - 1)
        tau = ts - starts[k]
        # partial cell [c_k, t] with its own Gauss-Legendre rule
        sub = (starts[k][:, None] + tau[:, None] * _XI[None, :]).ravel()
        Q = gram_Qt_many(self.model, sub)
        U = self.u_mat(sub)
        P = expm_many(A, (tau[:, None] * (1.0 - _XI[None, :])).ravel())
        part = (P @ Q @ U).reshape(ts.size, GL_NODES, *U.shape[1:])
        partial = tau[:, None, None] * np.einsum("i,kiab->kab", _WI, part)
        before = expm_many(A, tau) @ I[k]
        # on [t, T] the integrand K(t,s)u(s) = Q_t e^{(T-t)A*} W is constant in s
        Qt = gram_Qt_many(self.model, ts)
        after = (self.T - ts)[:, None, None] * (Qt @ self.u_mat(ts))
        return before + partial + after

    def a_mat(self, ts, check: bool = True) -> np.ndarray:
        """Matrices a(., t) for every t in ``ts``; shape (len(ts), d, d)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self._check_times(ts)
        if not check:
            return self._a_mat_level(ts, self.quad_level)
        # fixed probes: for t inside the first half of a coarse cell both levels use the same rule
        probes = np.concatenate([ts, self.T * np.arange(1, 9) / 8.0])
        coarse = self._a_mat_level(probes, self.quad_level)
        fine = self._a_mat_level(probes, self.quad_level + 1)
        scale = max(float(np.max(np.abs(fine))), np.finfo(float).tiny)
        change = float(np.max(np.abs(fine - coarse))) / scale
        if change > QUAD_RTOL:
            raise AccuracyError(
                f"shift quadrature did not converge at level {self.quad_level} "
                f"(relative change {change:.2e} > {QUAD_RTOL:.0e})"
            )
        return fine[: ts.size]

    def d_mat(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return expm_many(self.model.A, ts) - self.a_mat(ts)

    # F ---------------------------------------------------------------
    @cached_property
    def F_mat(self) -> np.ndarray:
        """Symmetric S with F(x) = x^T S x, from int_0^T u . a ds."""
        ncell = 2**self.quad_level
        h = self.T / ncell
        nodes = (np.arange(ncell)[:, None] * h + h * _XI[None, :]).ravel()
        weights = np.tile(h * _WI, ncell)
        Um = self.u_mat(nodes)
        Am = self.a_mat(nodes)
        S = np.einsum("k,kab,kac->bc", weights, Um, Am)
        asym = float(np.max(np.abs(S - S.T))) / max(float(np.max(np.abs(S))), np.finfo(float).tiny)
        if asym > 1e-7:
            raise ConsistencyError(f"F quadratic form is not symmetric (relative {asym:.2e})")
        S = 0.5 * (S + S.T)
        lam = np.linalg.eigvalsh(S)
        if lam[0] < -1e-10 * max(lam[-1], 1.0):
            raise ConsistencyError(f"F is negative in some direction ({lam[0]:.3e})")
        return S

    # bound constants --------------------------------------------------
    @cached_property
    def c_T(self) -> float:
        """sup_s ||e^{sA}||^2 ||U^{-1}||, the constant of |u(x,t)| <= c_T |x|."""
        return sup_expm_norm(self.model, self.T) ** 2 * float(np.linalg.norm(self.U_inv, 2))

    @cached_property
    def c_1T(self) -> float:
        """T sup_{t,s} ||K(t,s)|| c_T, the constant of |a(x,t)| <= c_{1,T} |x|."""
        ts = np.linspace(0.0, self.T, 33)
        kmax = max(np.linalg.norm(kernel_K(self.model, t, s), 2) for t in ts for s in ts)
        return self.T * float(kmax) * self.c_T

    def _check_times(self, ts):
        if np.any(~np.isfinite(ts)) or np.any(ts < 0) or np.any(ts > self.T * (1 + 1e-14)):
            raise InvalidInputError(f"times must lie in [0, {self.T}]")


def shift_u(model: OUModel, T: float, x, t) -> np.ndarray:
    """u(x, t) = e^{(T-t)A*} U^{-1} e^{TA} x; ``t`` scalar or array."""
    op = ShiftOperator(model, T)
    out = op.u_mat(t) @ np.asarray(x, dtype=float)
    return out[0] if np.ndim(t) == 0 else out


def shift_a(model: OUModel, T: float, x, t, quad_level: int | None = None) -> np.ndarray:
    """a(x, t) = int_0^T K(t, s) u(x, s) ds by composite Gauss-Legendre quadrature."""
    op = ShiftOperator(model, T, quad_level)
    out = op.a_mat(t) @ np.asarray(x, dtype=float)
    return out[0] if np.ndim(t) == 0 else out


def shift_d(model: OUModel, T: float, x, grid: DyadicGrid) -> np.ndarray:
    """d(x, t_j) = e^{t_j A} x - a(x, t_j) on the grid; shape (N, d)."""
    op = ShiftOperator(model, T, max(grid.level, QUAD_MIN_LEVEL))
    return op.d_mat(grid.points) @ np.asarray(x, dtype=float)


def cm_F(model: OUModel, T: float, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ ShiftOperator(model, T).F_mat @ x)


def cm_G_discrete(model: OUModel, T: float, x, h, grid: DyadicGrid) -> np.ndarray:
    """G^n(x, h) = sum_j u(x, t_j) . h(t_j) (t_j - t_{j-1}) (right endpoints).

    ``h`` may be one path (N, d) or a batch (m, N, d).
    """
    u = ShiftOperator(model, T).u_mat(grid.points) @ np.asarray(x, dtype=float)
    return riemann_pairing(u, h, grid)


def riemann_pairing(u: np.ndarray, h, grid: DyadicGrid):
    h = np.asarray(h, dtype=float)
    out = grid.dt * np.einsum("...nd,nd->...", h, u)
    return float(out) if out.ndim == 0 else out


def cm_G(model: OUModel, T: float, x, h) -> float:
    """G(x, h) = int_0^T u(x, s) . h(s) ds for a callable path ``h(s) -> state``.

    Evaluated by composite Gauss-Legendre quadrature at ``QUAD_MIN_LEVEL``.
    """
    op = ShiftOperator(model, T)
    ncell = 2**QUAD_MIN_LEVEL
    step = op.T / ncell
    nodes = (np.arange(ncell)[:, None] * step + step * _XI[None, :]).ravel()
    weights = np.tile(step * _WI, ncell)
    u = op.u_mat(nodes) @ np.asarray(x, dtype=float)
    hv = np.array([np.asarray(h(s), dtype=float) for s in nodes])
    return float(np.sum(weights * np.sum(u * hv, axis=1)))


@dataclass(frozen=True)
class ShiftData:
    """Shift quantities for one base state ``x`` on ``grid``."""

    model: OUModel
    T: float
    x: np.ndarray
    grid: DyadicGrid
    u_vals: np.ndarray
    a_vals: np.ndarray
    d_vals: np.ndarray
    F: float
    quad_level: int

    def G(self, h):
        """Discrete G^n(x, h) for one path or a batch."""
        return riemann_pairing(self.u_vals, h, self.grid)

    @property
    def d0(self) -> np.ndarray:
        """d(x, 0) = x, since a(x, 0) = 0."""
        return self.x

    def to_csv(self, path) -> None:
        d = self.x.size
        cols = ["t"] + [f"u_{i + 1}" for i in range(d)] + [f"a_{i + 1}" for i in range(d)] + [f"d_{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for j, t in enumerate(self.grid.points):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in (*self.u_vals[j], *self.a_vals[j], *self.d_vals[j])])


class ShiftFamily:
    """Grid-level shift matrices for one (model, T, grid); yields ShiftData per x."""

    def __init__(self, model: OUModel, T: float, grid: DyadicGrid, quad_level: int | None = None):
        if abs(grid.T - T) > 1e-14 * max(T, 1.0):
            raise InvalidInputError("grid horizon differs from T")
        level = max(grid.level, QUAD_MIN_LEVEL) if quad_level is None else quad_level
        self.op = ShiftOperator(model, T, level)
        self.grid = grid
        pts = grid.points
        self.u_mats = self.op.u_mat(pts)
        self.a_mats = self.op.a_mat(pts)
        self.d_mats = expm_many(model.A, pts) - self.a_mats

    @property
    def F_mat(self) -> np.ndarray:
        return self.op.F_mat

    def data(self, x) -> ShiftData:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.op.model.dim,):
            raise InvalidInputError(f"x must have shape ({self.op.model.dim},)")
        F = float(x @ self.F_mat @ x)
        return ShiftData(
            model=self.op.model, T=self.op.T, x=x, grid=self.grid,
            u_vals=self.u_mats @ x, a_vals=self.a_mats @ x, d_vals=self.d_mats @ x,
            F=max(F, 0.0), quad_level=self.op.quad_level,
        )

    def derivatives(self, x, y, h=None) -> dict:
        """Directional derivatives along y: F_x y, G_x y (if ``h`` given), d(y, .)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = {"Fx_y": float(2.0 * y @ self.F_mat @ x), "dxy": self.d_mats @ y}
        if h is not None:
            out["Gx_y"] = riemann_pairing(self.u_mats @ y, h, self.grid)
        return out


def cm_derivatives(model: OUModel, T: float, x, y, h, grid: DyadicGrid) -> dict:
    """{Fx_y, Gx_y, dxy}: F_x(x) y = 2 int u(y) . a(x), G_x(x, h) y = G^n(y, h), d_x y = d(y, .)."""
    return ShiftFamily(model, T, grid).derivatives(x, y, h)
