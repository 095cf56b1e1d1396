"""Gaussian law of the stochastic convolution W_A on dyadic time grids.

The grid vector is (W_A(t_1), ..., W_A(t_N)) with t_j = jT/2^n; t_0 = 0 is
left out because W_A(0) = 0. Flattened vectors use index ``j*d + i``.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg

from . import rng
from ._backend import kernels
from .errors import ConditioningError, InvalidInputError, ModelError
from .matrixcalc import OUModel, expm, expm_many, gram_Qt

EIG_FLOOR = 1e-12
PATH_BLOCK = 4096
_BINARY_MAGIC = b"OUPB0001"


@dataclass(frozen=True)
class DyadicGrid:
    T: float
    level: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidInputError(f"grid horizon must be > 0, got {self.T}")
        if int(self.level) != self.level or self.level < 0:
            raise InvalidInputError(f"grid level must be a non-negative integer, got {self.level}")

    @property
    def N(self) -> int:
        return 2**self.level

    @property
    def dt(self) -> float:
        return self.T / self.N

    @cached_property
    def points(self) -> np.ndarray:
        """t_1..t_N; the last point is exactly T."""
        pts = np.arange(1, self.N + 1) * (self.T / self.N)
        pts[-1] = self.T
        return pts

    def refine(self) -> "DyadicGrid":
        return DyadicGrid(self.T, self.level + 1)


def lower_factor(Q: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = Q, valid for singular PSD Q."""
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        lam, V = np.linalg.eigh(0.5 * (Q + Q.T))
        S = (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T
        _, R = np.linalg.qr(S.T)
        L = R.T
        signs = np.where(np.diag(L) < 0, -1.0, 1.0)
        return L * signs[None, :]


@dataclass(frozen=True)
class StepLaw:
    """One-step transition of the grid Markov chain: h_{j+1} = M h_j + L z."""

    trans: np.ndarray
    chol: np.ndarray
    Q_step: np.ndarray

    @classmethod
    def build(cls, model: OUModel, grid: DyadicGrid) -> "StepLaw":
        Q = gram_Qt(model, grid.dt)
        return cls(
            trans=np.ascontiguousarray(expm(model.A, grid.dt)),
            chol=np.ascontiguousarray(lower_factor(Q)),
            Q_step=Q,
        )


@dataclass
class GridGaussian:
    grid: DyadicGrid
    d: int
    cov: np.ndarray
    eigvals: np.ndarray = field(repr=False)
    eigvecs: np.ndarray = field(repr=False)
    log_condition: float = 0.0

    @property
    def min_eig(self) -> float:
        return float(self.eigvals[0])

    @cached_property
    def factor(self) -> np.ndarray:
        """Spectral factor V sqrt(max(lambda, floor*lambda_max)); factor @ factor.T ~ cov."""
        lam = np.maximum(self.eigvals, EIG_FLOOR * self.eigvals[-1])
        return self.eigvecs * np.sqrt(lam)[None, :]

    @cached_property
    def _cho(self):
        try:
            return scipy.linalg.cho_factor(self.cov, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(
                f"grid covariance is not numerically positive definite at level {self.grid.level}",
                self.log_condition,
            ) from exc

    @cached_property
    def inv(self) -> np.ndarray:
        """Explicit inverse (Cholesky based)."""
        inv = scipy.linalg.cho_solve(self._cho, np.eye(self.cov.shape[0]))
        return 0.5 * (inv + inv.T)

    def solve(self, v: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._cho, np.asarray(v, dtype=float))

    def block(self, i: int, j: int) -> np.ndarray:
        """Covariance block of (W_A(t_i), W_A(t_j)), 1-based indices."""
        d = self.d
        return self.cov[(i - 1) * d : i * d, (j - 1) * d : j * d]


def kernel_blocks(model: OUModel, grid: DyadicGrid) -> np.ndarray:
    """All blocks K(t_i, t_j) as an array of shape (N, N, d, d)."""
    N, d = grid.N, model.dim
    Qs = np.stack([gram_Qt(model, t) for t in grid.points])
    powers = expm_many(model.A, np.arange(N) * grid.dt)
    i, j = np.tril_indices(N)
    lower = np.einsum("kab,kbc->kac", powers[i - j], Qs[j])
    blocks = np.empty((N, N, d, d))
    blocks[i, j] = lower
    blocks[j, i] = np.swapaxes(lower, 1, 2)
    return blocks


def grid_covariance(model: OUModel, grid: DyadicGrid, strict: bool = True) -> GridGaussian:
    """Covariance of the grid vector, with block (i, j) equal to K(t_i, t_j).

    With ``strict`` a smallest eigenvalue at or below ``EIG_FLOOR * lambda_max``
    raises :class:`ConditioningError` (carrying the log10 condition number).
    """
    N, d = grid.N, model.dim
    blocks = kernel_blocks(model, grid)
    cov = blocks.transpose(0, 2, 1, 3).reshape(N * d, N * d)
    cov = 0.5 * (cov + cov.T)
    lam, V = np.linalg.eigh(cov)
    top = lam[-1]
    log_cond = float(np.log10(top / lam[0])) if lam[0] > 0 else float("inf")
    if strict and (top <= 0 or lam[0] <= EIG_FLOOR * top):
        raise ConditioningError(
            f"grid covariance at level {grid.level} is singular to working precision "
            f"(lambda_min/lambda_max = {lam[0] / top:.3e})",
            log_cond,
        )
    return GridGaussian(grid=grid, d=d, cov=cov, eigvals=lam, eigvecs=V, log_condition=log_cond)


@dataclass
class PathBatch:
    grid: DyadicGrid
    values: np.ndarray
    seed: int
    stream_id: int

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[2]

    def to_csv(self, path) -> None:
        """Columns path_id, j, t, x_1..x_d (long format, j = 1..N)."""
        m, N, d = self.values.shape
        pid = np.repeat(np.arange(m), N)
        jj = np.tile(np.arange(1, N + 1), m)
        tt = np.tile(self.grid.points, m)
        header = ",".join(["path_id", "j", "t"] + [f"x_{i + 1}" for i in range(d)])
        with open(path, "w", newline="") as fh:
            fh.write(header + "\n")
            vals = self.values.reshape(m * N, d)
            for row in range(m * N):
                fh.write(f"{pid[row]},{jj[row]},{tt[row]!r},")
                fh.write(",".join(repr(float(v)) for v in vals[row]) + "\n")

    def to_binary(self, path) -> None:
        m, N, d = self.values.shape
        header = struct.pack("<8sqqdqqq", _BINARY_MAGIC, d, self.grid.level, self.grid.T, m, self.seed, self.stream_id)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "PathBatch":
        raw = Path(path).read_bytes()
        size = struct.calcsize("<8sqqdqqq")
        magic, d, level, T, m, seed, stream = struct.unpack("<8sqqdqqq", raw[:size])
        if magic != _BINARY_MAGIC:
            raise InvalidInputError(f"{path}: not a path batch file")
        grid = DyadicGrid(T, level)
        values = np.frombuffer(raw[size:], dtype="<f8").reshape(m, grid.N, d).copy()
        return cls(grid=grid, values=values, seed=seed, stream_id=stream)


def map_blocks(fn, m: int, workers: int = 1, block: int = PATH_BLOCK):
    """Apply ``fn(start, stop)`` to fixed path blocks; results in block order."""
    spans = rng.blocks(m, block)
    if workers <= 1 or len(spans) == 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), spans))


def _check_step(model: OUModel, step: StepLaw) -> None:
    if not np.all(np.isfinite(step.chol)):
        raise ModelError("Q_Delta factorization failed")


def sample_wa_ar1(model: OUModel, grid: DyadicGrid, seed: int, stream: int, m: int, workers: int = 1) -> PathBatch:
    """Exact Markov recursion W_A(t_{j+1}) = e^{Delta A} W_A(t_j) + eta_j, eta_j ~ N(0, Q_Delta)."""
    step = StepLaw.build(model, grid)
    _check_step(model, step)
    N, d = grid.N, model.dim
    k = kernels()

    def run(a, b):
        z = rng.normals(seed, stream, a, b, N * d).reshape(b - a, N, d)
        return k.ar1_paths(z, step.trans, step.chol)

    parts = map_blocks(run, m, workers)
    values = np.concatenate(parts, axis=0) if parts else np.zeros((0, N, d))
    return PathBatch(grid=grid, values=values, seed=seed, stream_id=stream)


def sample_wa_joint(model: OUModel, grid: DyadicGrid, seed: int, stream: int, m: int,
                    workers: int = 1, gauss: GridGaussian | None = None) -> PathBatch:
    """Sample the whole grid vector at once as factor @ z from the joint covariance."""
    if gauss is None:
        gauss = grid_covariance(model, grid, strict=False)
    N, d = grid.N, model.dim
    F = gauss.factor

    def run(a, b):
        z = rng.normals(seed, stream, a, b, N * d)
        return (z @ F.T).reshape(b - a, N, d)

    parts = map_blocks(run, m, workers)
    values = np.concatenate(parts, axis=0) if parts else np.zeros((0, N, d))
    return PathBatch(grid=grid, values=values, seed=seed, stream_id=stream)


def mean_path(model: OUModel, x, grid: DyadicGrid) -> np.ndarray:
    """e^{t_j A} x for j = 1..N; shape (N, d)."""
    x = np.asarray(x, dtype=float)
    return expm_many(model.A, grid.points) @ x


def sample_X(model: OUModel, x, grid: DyadicGrid, seed: int, stream: int, m: int,
             sampler: str = "ar1", workers: int = 1) -> PathBatch:
    """X(t_j, x) = e^{t_j A} x + W_A(t_j) on the grid."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise InvalidInputError(f"x must have shape ({model.dim},)")
    if sampler == "ar1":
        batch = sample_wa_ar1(model, grid, seed, stream, m, workers)
    elif sampler == "joint":
        batch = sample_wa_joint(model, grid, seed, stream, m, workers)
    else:
        raise InvalidInputError(f"unknown sampler {sampler!r}")
    batch.values += mean_path(model, x, grid)[None]
    return batch


class LinearFunctional:
    """phi(h) = sum_j v_j . h(t_j)."""

    def __init__(self, v):
        self.v = np.asarray(v, dtype=float)

    def value(self, h):
        return np.einsum("mnd,nd->m", h, self.v)

    def directional(self, h, eta):
        return np.full(h.shape[0], float(np.sum(self.v * eta)))


class EndpointGaussian:
    """phi(h) = exp(-|h(T)|^2)."""

    def value(self, h):
        return np.exp(-np.sum(h[:, -1, :] ** 2, axis=1))

    def directional(self, h, eta):
        hT = h[:, -1, :]
        return -2.0 * np.exp(-np.sum(hT**2, axis=1)) * (hT @ eta[-1])


class SineOfLinear:
    """phi(h) = sin(sum_j v_j . h(t_j))."""

    def __init__(self, v):
        self.v = np.asarray(v, dtype=float)

    def value(self, h):
        return np.sin(np.einsum("mnd,nd->m", h, self.v))

    def directional(self, h, eta):
        return np.cos(np.einsum("mnd,nd->m", h, self.v)) * float(np.sum(self.v * eta))


class MeanSquareTanh:
    """phi(h) = tanh(mean_j |h(t_j)|^2)."""

    def value(self, h):
        return np.tanh(np.mean(np.sum(h**2, axis=2), axis=1))

    def directional(self, h, eta):
        s = np.mean(np.sum(h**2, axis=2), axis=1)
        ds = 2.0 * np.einsum("mnd,nd->m", h, eta) / h.shape[1]
        return (1.0 - np.tanh(s) ** 2) * ds


class MidpointProduct:
    """phi(h) = cos(h_1(T)) * exp(-|h(T/2)|^2)."""

    def value(self, h):
        mid = h.shape[1] // 2 - 1
        return np.cos(h[:, -1, 0]) * np.exp(-np.sum(h[:, mid, :] ** 2, axis=1))

    def directional(self, h, eta):
        mid = h.shape[1] // 2 - 1
        a = np.cos(h[:, -1, 0])
        b = np.exp(-np.sum(h[:, mid, :] ** 2, axis=1))
        da = -np.sin(h[:, -1, 0]) * eta[-1, 0]
        db = -2.0 * b * (h[:, mid, :] @ eta[mid])
        return da * b + a * db


def gaussian_ibp_residual(model: OUModel, grid: DyadicGrid, testfn, w, m: int, seed: int = 0,
                          stream: int = 7, gauss: GridGaussian | None = None) -> dict:
    """Discrete Gaussian integration by parts E[D phi(h).eta] = E[phi(h) <w, h>], eta = cov w.

    Both sides are estimated on the same draws; the residual is reported in
    units of the standard error of the paired per-path difference.
    """
    if gauss is None:
        gauss = grid_covariance(model, grid, strict=False)
    N, d = grid.N, model.dim
    w = np.asarray(w, dtype=float).reshape(N * d)
    eta = (gauss.cov @ w).reshape(N, d)
    h = sample_wa_ar1(model, grid, seed, stream, m).values
    lhs_s = testfn.directional(h, eta)
    rhs_s = testfn.value(h) * (h.reshape(m, N * d) @ w)
    diff = lhs_s - rhs_s
    se_diff = float(np.std(diff, ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
    lhs, rhs = float(np.mean(lhs_s)), float(np.mean(rhs_s))
    if se_diff > 0:
        resid = abs(lhs - rhs) / se_diff
    else:
        resid = 0.0 if np.isclose(lhs, rhs, rtol=1e-12, atol=1e-14) else float("inf")
    return {
        "lhs": lhs,
        "rhs": rhs,
        "lhs_se": float(np.std(lhs_s, ddof=1) / np.sqrt(m)),
        "rhs_se": float(np.std(rhs_s, ddof=1) / np.sqrt(m)),
        "residual_in_se": resid,
    }


def rayleigh_quotient(gauss: GridGaussian, h: np.ndarray) -> float:
    """dt * <cov h, h> / <h, h>: the discrete L^2 Rayleigh quotient of the path covariance."""
    v = np.asarray(h, dtype=float).reshape(-1)
    return float(gauss.grid.dt * (v @ gauss.cov @ v) / (v @ v))
