"""Deterministic matrix calculus for the linear SDE dX = AX dt + sqrt(C) dW.

Covariance integrals are evaluated with block-matrix exponentials (Van Loan);
adaptive quadrature versions are kept alongside as independent cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.integrate import quad_vec

from .errors import ConsistencyError, InvalidInputError, ModelError

RANK_RTOL = 1e-10
DET_RTOL = 1e-12


def _as_square(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"{name} must be a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return M


def _symmetric_error(M):
    scale = max(np.abs(M).max(), 1e-300)
    return np.abs(M - M.T).max() / scale


@dataclass(frozen=True)
class OUModel:
    """Drift matrix ``A`` and symmetric PSD diffusion matrix ``C``.

    ``sqrtC`` is the symmetric PSD square root, cached at construction.
    """

    A: np.ndarray
    C: np.ndarray
    sqrtC: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, A, C) -> "OUModel":
        A = _as_square(A, "A")
        C = _as_square(C, "C")
        if A.shape != C.shape:
            raise InvalidInputError(f"A {A.shape} and C {C.shape} differ in shape")
        if _symmetric_error(C) > 1e-12:
            raise InvalidInputError("C is not symmetric (relative asymmetry > 1e-12)")
        C = 0.5 * (C + C.T)
        lam = np.linalg.eigvalsh(C)
        norm = max(np.abs(lam).max(), 0.0)
        if lam.min() < -1e-12 * max(norm, 1e-300):
            raise InvalidInputError(f"C is not positive semi-definite (min eigenvalue {lam.min():.3e})")
        sqrtC = psd_pseudo_ops(C)["sqrt"]
        for arr in (A, C, sqrtC):
            arr.setflags(write=False)
        return cls(A=A, C=C, sqrtC=sqrtC)

    @classmethod
    def kolmogorov(cls) -> "OUModel":
        """The d=2 model A=[[0,0],[1,0]], C=diag(1,0) (noise in the first coordinate only)."""
        return cls.from_arrays([[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]])

    @classmethod
    def brownian(cls, d: int = 1) -> "OUModel":
        return cls.from_arrays(np.zeros((d, d)), np.eye(d))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def to_text(self) -> str:
        def row(M):
            return " ".join(repr(float(v)) for v in M.ravel())

        return f"d = {self.dim}\nA = {row(self.A)}\nC = {row(self.C)}\n"


def parse_model_text(text: str) -> OUModel:
    """Parse the ``d = ..`` / ``A = ..`` / ``C = ..`` key-value model format.

    Matrices are row-major, whitespace or comma separated. Blank lines and
    ``#`` comments are ignored.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val
    for key in ("d", "A", "C"):
        if key not in values:
            raise InvalidInputError(f"model field '{key}' missing")
    try:
        d = int(values["d"])
    except ValueError:
        raise InvalidInputError(f"model field 'd': not an integer: {values['d']!r}") from None
    if d < 1:
        raise InvalidInputError("model field 'd': must be >= 1")
    mats = {}
    for key in ("A", "C"):
        try:
            entries = [float(t) for t in values[key].replace(",", " ").split()]
        except ValueError:
            raise InvalidInputError(f"model field '{key}': non-numeric entry") from None
        if len(entries) != d * d:
            raise InvalidInputError(f"model field '{key}': expected {d * d} entries, got {len(entries)}")
        mats[key] = np.array(entries).reshape(d, d)
    if _symmetric_error(mats["C"]) > 1e-12:
        raise InvalidInputError("model field 'C': matrix is not symmetric")
    return OUModel.from_arrays(mats["A"], mats["C"])


def read_model_file(path) -> OUModel:
    return parse_model_text(Path(path).read_text())


def write_model_file(model: OUModel, path) -> None:
    Path(path).write_text(model.to_text())


def expm(A, t: float = 1.0) -> np.ndarray:
    """Return e^{tA} (scaling and squaring with Pade approximants)."""
    A = _as_square(A, "A")
    if not np.isfinite(t):
        raise InvalidInputError("t must be finite")
    return scipy.linalg.expm(t * A)


def expm_many(A, ts) -> np.ndarray:
    """Stack of e^{tA} for every t in ``ts``; shape (len(ts), d, d)."""
    ts = np.asarray(ts, dtype=float)
    return scipy.linalg.expm(ts[:, None, None] * np.asarray(A)[None])


def gram_Qt(model: OUModel, t: float) -> np.ndarray:
    """Q_t = int_0^t e^{sA} C e^{sA*} ds via the Van Loan block exponential."""
    if not np.isfinite(t) or t < 0:
        raise InvalidInputError(f"t must be finite and >= 0, got {t}")
    d = model.dim
    if t == 0:
        return np.zeros((d, d))
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = -model.A
    M[:d, d:] = model.C
    M[d:, d:] = model.A.T
    E = scipy.linalg.expm(t * M)
    Q = E[d:, d:].T @ E[:d, d:]
    return 0.5 * (Q + Q.T)


def gram_Qt_many(model: OUModel, ts) -> np.ndarray:
    """Stack of Q_t for every t in ``ts`` (same block exponential, batched)."""
    ts = np.asarray(ts, dtype=float)
    if np.any(~np.isfinite(ts)) or np.any(ts < 0):
        raise InvalidInputError("times must be finite and >= 0")
    d = model.dim
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = -model.A
    M[:d, d:] = model.C
    M[d:, d:] = model.A.T
    E = scipy.linalg.expm(ts[:, None, None] * M[None])
    Q = np.swapaxes(E[:, d:, d:], 1, 2) @ E[:, :d, d:]
    return 0.5 * (Q + np.swapaxes(Q, 1, 2))


def gram_Qt_quadrature(model: OUModel, t: float, rtol: float = 1e-12) -> np.ndarray:
    """Adaptive-quadrature version of :func:`gram_Qt` (cross-check only)."""
    if t == 0:
        return np.zeros((model.dim, model.dim))

    def integrand(s):
        E = scipy.linalg.expm(s * model.A)
        return E @ model.C @ E.T

    Q, _ = quad_vec(integrand, 0.0, t, epsabs=1e-15, epsrel=rtol)
    return 0.5 * (Q + Q.T)


def _weighted_gram(model: OUModel, T: float) -> np.ndarray:
    d = model.dim
    M = np.zeros((3 * d, 3 * d))
    M[:d, :d] = -model.A
    M[:d, d : 2 * d] = model.C
    M[d : 2 * d, d : 2 * d] = model.A.T
    M[d : 2 * d, 2 * d :] = np.eye(d)
    M[2 * d :, 2 * d :] = model.A.T
    E = scipy.linalg.expm(T * M)
    U = E[2 * d :, 2 * d :].T @ E[:d, 2 * d :]
    return 0.5 * (U + U.T)


def gram_U(model: OUModel, T: float, rtol: float = DET_RTOL) -> np.ndarray:
    """U = int_0^T r e^{rA} C e^{rA*} dr.

    Raises :class:`ModelError` when U is numerically singular, which signals
    that the controllability hypothesis fails.
    """
    if not np.isfinite(T) or T <= 0:
        raise InvalidInputError(f"T must be finite and > 0, got {T}")
    U = _weighted_gram(model, T)
    lam = np.linalg.eigvalsh(U)
    if lam.max() <= 0 or lam.min() <= rtol * lam.max():
        raise ModelError(
            f"U is singular (eigenvalues {lam.min():.3e}..{lam.max():.3e}); "
            "the rank condition fails or T is too small"
        )
    return U


def gram_U_quadrature(model: OUModel, T: float, rtol: float = 1e-12) -> np.ndarray:
    def integrand(r):
        E = scipy.linalg.expm(r * model.A)
        return r * (E @ model.C @ E.T)

    U, _ = quad_vec(integrand, 0.0, T, epsabs=1e-15, epsrel=rtol)
    return 0.5 * (U + U.T)


def kernel_K(model: OUModel, t: float, s: float) -> np.ndarray:
    """Covariance kernel E[W_A(t) W_A(s)^T] of the stochastic convolution.

    For s <= t this is e^{(t-s)A} Q_s, and K(t, s) = K(s, t)^T.
    """
    if t < 0 or s < 0:
        raise InvalidInputError("kernel_K needs t, s >= 0")
    if s <= t:
        return expm(model.A, t - s) @ gram_Qt(model, s)
    return gram_Qt(model, t) @ expm(model.A, s - t).T


def kernel_K_quadrature(model: OUModel, t: float, s: float, rtol: float = 1e-12) -> np.ndarray:
    """Direct quadrature of int_0^{min(t,s)} e^{(t-r)A} C e^{(s-r)A*} dr."""
    lo = min(t, s)
    if lo == 0:
        return np.zeros((model.dim, model.dim))

    def integrand(r):
        return scipy.linalg.expm((t - r) * model.A) @ model.C @ scipy.linalg.expm((s - r) * model.A).T

    K, _ = quad_vec(integrand, 0.0, lo, epsabs=1e-15, epsrel=rtol)
    return K


def controllability_matrix(model: OUModel) -> np.ndarray:
    blocks = [model.sqrtC]
    for _ in range(model.dim - 1):
        blocks.append(model.A @ blocks[-1])
    return np.hstack(blocks)


def kalman_rank(model: OUModel, rel_cutoff: float = RANK_RTOL) -> bool:
    """True iff rank[sqrtC, A sqrtC, ..., A^{d-1} sqrtC] = d."""
    sv = np.linalg.svd(controllability_matrix(model), compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return False
    return int(np.sum(sv > rel_cutoff * sv[0])) == model.dim


def relative_min_eig(M: np.ndarray) -> float:
    """lambda_min / lambda_max of a PSD matrix (0 for the zero matrix).

    For PSD M, det M > 0 iff this ratio is positive; unlike det M / ||M||^d
    it does not compound d-1 small ratios, so the cutoff separates singular
    from merely ill-conditioned matrices.
    """
    lam = np.linalg.eigvalsh(M)
    top = lam.max()
    if top <= 0:
        return 0.0
    return float(max(lam.min(), 0.0) / top)


@dataclass
class HypothesisReport:
    kalman_rank_ok: bool
    min_det_Qt: float
    probed_times: list
    consistent: bool
    rel_min_eigs: list = field(default_factory=list)

    def as_rows(self):
        rows = [("kalman_rank_ok", self.kalman_rank_ok), ("min_det_Qt", self.min_det_Qt)]
        for t, ratio in zip(self.probed_times, self.rel_min_eigs):
            rows.append((f"rel_min_eig_Q[{t}]", ratio))
        rows.append(("consistent", self.consistent))
        return rows


def check_hypothesis1(model: OUModel, times, det_cutoff: float = DET_RTOL, strict: bool = True) -> HypothesisReport:
    """Probe det Q_t > 0 at ``times`` and compare with the Kalman rank test.

    A probe counts as nonsingular when lambda_min(Q_t) > det_cutoff *
    lambda_max(Q_t). The rank test is authoritative; the determinant probes
    must agree with it at every probed time. With ``strict`` a disagreement raises
    :class:`ConsistencyError`.
    """
    times = [float(t) for t in times]
    if not times or any(t <= 0 for t in times):
        raise InvalidInputError("times must be a nonempty list of positive numbers")
    rank_ok = kalman_rank(model)
    dets, ratios = [], []
    for t in times:
        Q = gram_Qt(model, t)
        dets.append(float(np.linalg.det(Q)))
        ratios.append(relative_min_eig(Q))
    det_ok = [ratio > det_cutoff for ratio in ratios]
    consistent = all(ok == rank_ok for ok in det_ok)
    report = HypothesisReport(
        kalman_rank_ok=rank_ok,
        min_det_Qt=min(dets),
        probed_times=times,
        consistent=consistent,
        rel_min_eigs=ratios,
    )
    if strict and not consistent:
        raise ConsistencyError(
            f"rank test says {rank_ok} but lambda_min/lambda_max of Q_t = {ratios} at t = {times}"
        )
    return report


def psd_pseudo_ops(M, rel_cutoff: float = RANK_RTOL) -> dict:
    """Square root, Moore-Penrose inverse and inverse square root of a PSD matrix.

    Eigenvalues below ``rel_cutoff * lambda_max`` are treated as zero.
    """
    M = _as_square(M, "M")
    if _symmetric_error(M) > 1e-10:
        raise InvalidInputError("psd_pseudo_ops needs a symmetric matrix")
    lam, V = np.linalg.eigh(0.5 * (M + M.T))
    top = lam.max() if lam.size else 0.0
    keep = lam > rel_cutoff * top if top > 0 else np.zeros_like(lam, dtype=bool)
    lam_k = np.where(keep, lam, 0.0)
    inv = np.where(keep, 1.0 / np.where(keep, lam, 1.0), 0.0)
    sqrt = (V * np.sqrt(lam_k)) @ V.T
    pinv = (V * inv) @ V.T
    pinv_sqrt = (V * np.sqrt(inv)) @ V.T
    return {
        "sqrt": 0.5 * (sqrt + sqrt.T),
        "pinv": 0.5 * (pinv + pinv.T),
        "pinv_sqrt": 0.5 * (pinv_sqrt + pinv_sqrt.T),
        "rank": int(keep.sum()),
    }


def sup_expm_norm(model: OUModel, T: float, samples: int = 257) -> float:
    """sup_{0<=s<=T} ||e^{sA}||_2, evaluated on a uniform grid of ``samples`` points."""
    ts = np.linspace(0.0, T, samples)
    return float(np.linalg.norm(expm_many(model.A, ts), ord=2, axis=(1, 2)).max())


def random_model(rng: np.random.Generator, d: int, controllable: bool | None = None) -> OUModel:
    """Random (A, C) pair used by the randomized property sweeps.

    ``controllable=False`` builds a structurally uncontrollable pair (noise
    confined to an A-invariant subspace, then rotated); ``True`` draws a
    generic pair and rejects the measure-zero failures; ``None`` picks either.
    """
    if controllable is None:
        controllable = bool(rng.integers(0, 2))
    if d == 1 and not controllable:
        return OUModel.from_arrays(rng.normal(size=(1, 1)), np.zeros((1, 1)))
    if controllable:
        while True:
            A = rng.normal(size=(d, d)) / np.sqrt(d)
            k = int(rng.integers(1, d + 1))
            B = rng.normal(size=(d, k))
            model = OUModel.from_arrays(A, B @ B.T)
            if kalman_rank(model):
                return model
    k = int(rng.integers(1, d))
    A = np.zeros((d, d))
    A[:k, :k] = rng.normal(size=(k, k)) / np.sqrt(d)
    A[k:, k:] = rng.normal(size=(d - k, d - k)) / np.sqrt(d)
    A[:k, k:] = rng.normal(size=(k, d - k)) / np.sqrt(d)
    B = np.zeros((d, k))
    B[:k] = rng.normal(size=(k, k))
    P, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return OUModel.from_arrays(P @ A @ P.T, P @ (B @ B.T) @ P.T)
