"""Per-path summaries of W_A on a grid, computed block by block.

Estimators never hold whole path batches: each fixed-size block of paths is
reduced to the running gauge maximum (with its argmax state), the endpoint
h(T) and a few linear functionals sum_j v_j . h(t_j). Blocks are fixed by
path index, so any worker count gives identical arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from ._backend import kernels
from .domain import ConvexDomain, gamma_argmax
from .matrixcalc import OUModel
from .pathlaw import PATH_BLOCK, DyadicGrid, StepLaw, map_blocks


@dataclass
class PathSummary:
    gamma: np.ndarray  # (m,) max over j = 0..N; -inf without a domain
    jstar: np.ndarray  # (m,) maximizing index in 0..N
    kstar: np.ndarray  # (m, d) state h + shift at the maximizer
    hT: np.ndarray  # (m, d)
    lin: np.ndarray  # (m, q)

    @property
    def m(self) -> int:
        return self.gamma.shape[0]


def _concat(parts, d, q) -> PathSummary:
    if not parts:
        return PathSummary(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros((0, d)), np.zeros((0, d)), np.zeros((0, q)))
    return PathSummary(*(np.concatenate([getattr(p, f) for p in parts], axis=0) for f in ("gamma", "jstar", "kstar", "hT", "lin")))


def simulate_summaries(model: OUModel, grid: DyadicGrid, shift, domain: ConvexDomain | None, x0,
                       lin, seed: int, stream: int, m: int, workers: int = 1,
                       block: int = PATH_BLOCK, step: StepLaw | None = None) -> PathSummary:
    """Summaries of k = h + shift for m paths h ~ W_A on ``grid``.

    Parameters
    ----------
    shift : (N, d) array
        Deterministic path added to h before the gauge is evaluated.
    domain : ConvexDomain or None
        ``None`` skips the gauge (gamma = -inf, jstar = 0).
    x0 : (d,) array
        State at t_0 (the j = 0 term of the maximum).
    lin : (q, N, d) array
        Weights of the linear functionals sum_j lin[q, j] . h(t_j).
    """
    N, d = grid.N, model.dim
    step = StepLaw.build(model, grid) if step is None else step
    shift = np.ascontiguousarray(np.broadcast_to(np.asarray(shift, dtype=float), (N, d)))
    lin = np.ascontiguousarray(np.asarray(lin, dtype=float).reshape(-1, N, d))
    q = lin.shape[0]
    x0 = np.asarray(x0, dtype=float)
    k = kernels()
    compiled_gauge = domain is None or domain.quad_matrix is not None
    gmat = np.zeros((d, d)) if domain is None else domain.quad_matrix
    g0 = None if domain is None else float(domain.g(x0))

    def run(a, b):
        z = rng.normals(seed, stream, a, b, N * d).reshape(b - a, N, d)
        if compiled_gauge:
            gam, js, ks, hT, lo = k.ar1_fused(z, step.trans, step.chol, shift, np.ascontiguousarray(gmat), lin)
            if domain is None:
                gam = np.full(b - a, -np.inf)
                js = np.zeros(b - a, dtype=np.int64)
            else:
                at0 = g0 >= gam
                gam = np.where(at0, g0, gam)
                js = np.where(at0, 0, js)
                ks = np.where(at0[:, None], x0[None, :], ks)
            return PathSummary(gam, js.astype(np.int64), ks, hT, lo)
        paths = k.ar1_paths(z, step.trans, step.chol)
        gam, js = gamma_argmax(domain, paths, shift, x0)
        states = paths + shift[None]
        rows = np.arange(b - a)
        ks = np.where((js == 0)[:, None], x0[None, :], states[rows, np.clip(js - 1, 0, N - 1)])
        lo = np.einsum("bnd,qnd->bq", paths, lin) if q else np.zeros((b - a, 0))
        return PathSummary(gam, js.astype(np.int64), ks, paths[:, -1, :].copy(), lo)

    return _concat(map_blocks(run, m, workers, block), d, q)
