"""Pure-numpy path kernels (fallback for the compiled ``_kernels_c``).

Conventions shared with the compiled module:

* ``z`` has shape (b, N, d): standard normals for b paths on N grid points.
* The path recursion is h_1 = L z_1, h_{j+1} = M h_j + L z_{j+1}, with
  M = e^{Delta A} and L a factor of Q_Delta.
* Gauge values are the quadratic form k^T G k of k_j = h_j + shift_j.
* ``jstar`` is 1-based (1..N), first maximizer on ties.
"""

import numpy as np


def ar1_paths(z, trans, chol):
    z = np.asarray(z, dtype=np.float64)
    b, N, d = z.shape
    noise = z @ np.asarray(chol).T
    out = np.empty_like(noise)
    x = noise[:, 0, :]
    out[:, 0, :] = x
    MT = np.asarray(trans).T
    for j in range(1, N):
        x = x @ MT + noise[:, j, :]
        out[:, j, :] = x
    return out


def gauge_max_quadratic(paths, shift, gmat):
    k = np.asarray(paths) + np.asarray(shift)[None]
    vals = np.einsum("bnd,de,bne->bn", k, np.asarray(gmat), k)
    jidx = np.argmax(vals, axis=1)
    gamma = vals[np.arange(vals.shape[0]), jidx]
    return gamma, jidx + 1


def ar1_fused(z, trans, chol, shift, gmat, lin):
    paths = ar1_paths(z, trans, chol)
    gamma, jstar = gauge_max_quadratic(paths, shift, gmat)
    rows = np.arange(paths.shape[0])
    kstar = paths[rows, jstar - 1, :] + np.asarray(shift)[jstar - 1]
    hT = paths[:, -1, :].copy()
    lin = np.asarray(lin, dtype=np.float64)
    if lin.shape[0]:
        lin_out = np.einsum("bnd,qnd->bq", paths, lin)
    else:
        lin_out = np.zeros((paths.shape[0], 0))
    return gamma, jstar, kstar, hT, lin_out
