"""Monte Carlo estimators of the transition and stopped semigroups.

Stream ids (one counter-based stream per estimator, so cross-estimator
comparisons at the same seed use independent draws):

    1 unstopped_direct   2 unstopped_cm   3 stopped_direct   4 stopped_cm
    5 lambda_cdf / lambda_density         6 cm_weight_mean
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import rng
from .domain import ConvexDomain
from .engine import simulate_summaries
from .errors import BandwidthError, ConditioningError, InvalidInputError
from .matrixcalc import OUModel, expm, expm_many, gram_Qt, relative_min_eig
from .pathlaw import DyadicGrid, kernel_blocks, lower_factor, map_blocks
from .shift import ShiftFamily

STREAM_UNSTOPPED_DIRECT = 1
STREAM_UNSTOPPED_CM = 2
STREAM_STOPPED_DIRECT = 3
STREAM_STOPPED_CM = 4
STREAM_LAMBDA = 5
STREAM_WEIGHT = 6

LOG_WEIGHT_GUARD = 700.0
MIN_SHELL_COUNT = 100


def _canon(v):
    if isinstance(v, np.ndarray):
        return [_canon(e) for e in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_canon(e) for e in v]
    if isinstance(v, dict):
        return {str(k): _canon(v[k]) for k in sorted(v)}
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def config_hash(**fields) -> str:
    """Stable short hash of the inputs; floats enter through repr()."""
    payload = json.dumps(_canon(fields), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class EstimatorResult:
    mean: float
    stderr: float
    m: int
    seed: int
    config_hash: str
    wall_ms: float
    info: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, values, seed, chash, t0, **info) -> "EstimatorResult":
        values = np.asarray(values, dtype=float)
        m = values.size
        se = float(np.std(values, ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
        return cls(float(np.mean(values)), se, m, int(seed), chash, (time.perf_counter() - t0) * 1e3, dict(info))


class TestFunction:
    """Bounded test function phi on the state space.

    kinds: ``gauss_bump`` (center, width), ``bounded_sin`` (freq, phase),
    ``halfspace_indicator`` (normal, offset: 1{normal . xi >= offset}),
    ``constant_one``.
    """

    __test__ = False
    KINDS = ("gauss_bump", "bounded_sin", "halfspace_indicator", "constant_one")

    def __init__(self, kind: str, **params):
        if kind not in self.KINDS:
            raise InvalidInputError(f"unknown test function {kind!r}; expected one of {self.KINDS}")
        self.kind = kind
        self.params = {k: (np.asarray(v, dtype=float) if np.ndim(v) else float(v)) for k, v in params.items()}
        if kind == "gauss_bump":
            self.params.setdefault("width", 0.5)
            if self.params["width"] <= 0:
                raise InvalidInputError("gauss_bump width must be > 0")
        if kind == "bounded_sin":
            self.params.setdefault("phase", 0.0)
        if kind == "halfspace_indicator":
            self.params.setdefault("offset", 0.0)

    @property
    def sup(self) -> float:
        return 1.0

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        p = self.params
        if self.kind == "gauss_bump":
            c = np.broadcast_to(p.get("center", 0.0), xi.shape[-1:])
            return np.exp(-np.sum((xi - c) ** 2, axis=-1) / (2.0 * p["width"] ** 2))
        if self.kind == "bounded_sin":
            return np.sin(xi @ np.atleast_1d(p["freq"]) + p["phase"])
        if self.kind == "halfspace_indicator":
            return (xi @ np.atleast_1d(p["normal"]) >= p["offset"]).astype(float)
        return np.ones(xi.shape[:-1])

    def describe(self) -> dict:
        return {"kind": self.kind, **{k: _canon(v) for k, v in self.params.items()}}

    def __repr__(self):
        return f"TestFunction({self.kind}, {self.describe()})"


def _model_fields(model: OUModel) -> dict:
    return {"A": model.A, "C": model.C}


def _normal_draws(model, seed, stream, m, workers, fn):
    d = model.dim
    parts = map_blocks(lambda a, b: fn(rng.normals(seed, stream, a, b, d)), m, workers)
    return np.concatenate(parts) if parts else np.zeros(0)


def unstopped_direct(model: OUModel, phi: TestFunction, x, t: float, m: int, seed: int,
                     workers: int = 1, stream: int = STREAM_UNSTOPPED_DIRECT) -> EstimatorResult:
    """Mean of phi(y), y ~ N(e^{tA} x, Q_t)."""
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=float)
    mean = expm(model.A, t) @ x
    L = lower_factor(gram_Qt(model, t))
    vals = _normal_draws(model, seed, stream, m, workers, lambda z: phi(mean + z @ L.T))
    chash = config_hash(op="unstopped_direct", model=_model_fields(model), phi=phi.describe(), x=x, t=t, m=m, seed=seed)
    return EstimatorResult.from_samples(vals, seed, chash, t0)


def unstopped_cm(model: OUModel, phi: TestFunction, x, t: float, m: int, seed: int,
                 workers: int = 1, stream: int = STREAM_UNSTOPPED_CM) -> EstimatorResult:
    """Mean of phi(y) exp(-|Lx|^2/2 + <Lx, Q_t^{-1/2} y>), y ~ N(0, Q_t), L = Q_t^{-1/2} e^{tA}."""
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=float)
    Q = gram_Qt(model, t)
    rel = relative_min_eig(Q)
    if not rel > 1e-12:
        raise ConditioningError(f"Q_t is numerically singular at t={t} (lambda_min/lambda_max = {rel:.2e})",
                                float(np.log10(1.0 / rel)) if rel > 0 else float("inf"))
    lam, V = np.linalg.eigh(Q)
    Qmh = (V / np.sqrt(lam)) @ V.T
    Lx = Qmh @ expm(model.A, t) @ x
    Lfac = lower_factor(Q)

    def block(a, b):
        y = rng.normals(seed, stream, a, b, model.dim) @ Lfac.T
        w = np.exp(-0.5 * Lx @ Lx + (y @ Qmh) @ Lx)
        return np.stack([phi(y) * w, w])

    parts = map_blocks(block, m, workers)
    both = np.concatenate(parts, axis=1) if parts else np.zeros((2, 0))
    vals, w_all = both
    chash = config_hash(op="unstopped_cm", model=_model_fields(model), phi=phi.describe(), x=x, t=t, m=m, seed=seed)
    return EstimatorResult.from_samples(vals, seed, chash, t0, weight_mean=float(np.mean(w_all)),
                                        weight_se=float(np.std(w_all, ddof=1) / np.sqrt(max(m, 2))))


def stopped_direct(model: OUModel, domain: ConvexDomain | None, phi: TestFunction, x, T: float,
                   grid: DyadicGrid, m: int, seed: int, workers: int = 1,
                   stream: int = STREAM_STOPPED_DIRECT) -> EstimatorResult:
    """Mean of phi(X(T)) 1{g(X(t_j)) <= r, j = 0..N}, X(t_j) = e^{t_j A} x + W_A(t_j).

    ``domain=None`` drops the indicator (unstopped semigroup on the grid).
    """
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=float)
    _check_grid(grid, T)
    if domain is not None:
        domain.require_inside(x)
    mean_path = expm_many(model.A, grid.points) @ x
    s = simulate_summaries(model, grid, mean_path, domain, x, np.zeros((0, grid.N, model.dim)), seed, stream, m, workers)
    alive = np.ones(m) if domain is None else (s.gamma <= domain.r).astype(float)
    vals = phi(s.hT + mean_path[-1]) * alive
    chash = config_hash(op="stopped_direct", model=_model_fields(model), domain=_domain_fields(domain),
                        phi=phi.describe(), x=x, T=T, n=grid.level, m=m, seed=seed)
    return EstimatorResult.from_samples(vals, seed, chash, t0, survival=float(np.mean(alive)))


def _domain_fields(domain):
    if domain is None:
        return None
    return {"name": domain.name, "r": domain.r, "M": domain.quad_matrix}


def _check_grid(grid: DyadicGrid, T: float):
    if abs(grid.T - T) > 1e-14 * max(1.0, T):
        raise InvalidInputError(f"grid horizon {grid.T} differs from T = {T}")


def cm_log_weights(sd, G):
    """-F/2 + G^n, with the overflow guard; returns (log_weight, clamped_count)."""
    logw = -0.5 * sd.F + np.asarray(G)
    clamped = int(np.sum(np.abs(G) > LOG_WEIGHT_GUARD))
    return np.clip(logw, -745.0, LOG_WEIGHT_GUARD), clamped


def stopped_cm(model: OUModel, domain: ConvexDomain | None, phi: TestFunction, x, T: float,
               grid: DyadicGrid, m: int, seed: int, workers: int = 1,
               stream: int = STREAM_STOPPED_CM, family: ShiftFamily | None = None) -> EstimatorResult:
    """Mean of phi(h(T)) 1{Gamma_n(h + d(x,.)) <= r} exp(-F(x)/2 + G^n(x, h)), h ~ W_A."""
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=float)
    _check_grid(grid, T)
    if domain is not None:
        domain.require_inside(x)
    family = ShiftFamily(model, T, grid) if family is None else family
    sd = family.data(x)
    lin = (grid.dt * sd.u_vals)[None]
    s = simulate_summaries(model, grid, sd.d_vals, domain, x, lin, seed, stream, m, workers)
    logw, clamped = cm_log_weights(sd, s.lin[:, 0])
    alive = np.ones(m) if domain is None else (s.gamma <= domain.r).astype(float)
    vals = phi(s.hT) * alive * np.exp(logw)
    chash = config_hash(op="stopped_cm", model=_model_fields(model), domain=_domain_fields(domain),
                        phi=phi.describe(), x=x, T=T, n=grid.level, m=m, seed=seed)
    return EstimatorResult.from_samples(vals, seed, chash, t0, F=sd.F, clamped=clamped)


def cm_weight_mean(model: OUModel, x, T: float, grid: DyadicGrid, m: int, seed: int,
                   workers: int = 1, stream: int = STREAM_WEIGHT) -> EstimatorResult:
    """Mean of exp(-F/2 + G^n) over the unrestricted path space.

    ``info['exact']`` is exp((Var G^n - F)/2), the exact mean of the
    discretized weight (G^n is a Riemann sum, so it is 1 only as n grows).
    """
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=float)
    family = ShiftFamily(model, T, grid)
    sd = family.data(x)
    v = grid.dt * sd.u_vals
    s = simulate_summaries(model, grid, sd.d_vals, None, x, v[None], seed, stream, m, workers)
    logw, clamped = cm_log_weights(sd, s.lin[:, 0])
    blocks = kernel_blocks(model, grid)
    var_g = float(np.einsum("ia,ijab,jb->", v, blocks, v))
    chash = config_hash(op="cm_weight_mean", model=_model_fields(model), x=x, T=T, n=grid.level, m=m, seed=seed)
    return EstimatorResult.from_samples(np.exp(logw), seed, chash, t0, exact=float(np.exp(0.5 * (var_g - sd.F))),
                                        var_G=var_g, F=sd.F, clamped=clamped)


def gamma_samples(model: OUModel, domain: ConvexDomain, x, grid: DyadicGrid, m: int, seed: int,
                  workers: int = 1, stream: int = STREAM_LAMBDA, family: ShiftFamily | None = None) -> np.ndarray:
    """Samples of Gamma_n(h + d(x, .)), h ~ W_A (no reweighting)."""
    x = np.asarray(x, dtype=float)
    family = ShiftFamily(model, grid.T, grid) if family is None else family
    sd = family.data(x)
    s = simulate_summaries(model, grid, sd.d_vals, domain, x, np.zeros((0, grid.N, model.dim)), seed, stream, m, workers)
    return s.gamma


def lambda_cdf(model: OUModel, domain: ConvexDomain, x, grid: DyadicGrid, m: int, seed: int,
               s_values, workers: int = 1, gammas: np.ndarray | None = None) -> list:
    """[(s, Lambda_hat(s), stderr)] for the law of Gamma_n(h + d(x, .))."""
    if gammas is None:
        gammas = gamma_samples(model, domain, x, grid, m, seed, workers)
    m = gammas.size
    srt = np.sort(gammas)
    out = []
    for s in s_values:
        p = np.searchsorted(srt, s, side="right") / m
        out.append((float(s), float(p), float(np.sqrt(p * (1 - p) / m))))
    return out


def lambda_density(model: OUModel, domain: ConvexDomain, x, grid: DyadicGrid, m: int, seed: int,
                   r: float | None = None, eps: float | None = None, workers: int = 1,
                   gammas: np.ndarray | None = None) -> EstimatorResult:
    """(Lambda_hat(r + eps) - Lambda_hat(r - eps)) / (2 eps) with binomial stderr."""
    t0 = time.perf_counter()
    r = domain.r if r is None else float(r)
    eps = r / 50.0 if eps is None else float(eps)
    if eps <= 0:
        raise InvalidInputError("bandwidth must be > 0")
    if gammas is None:
        gammas = gamma_samples(model, domain, x, grid, m, seed, workers)
    m = gammas.size
    inside = (gammas > r - eps) & (gammas <= r + eps)
    count = int(inside.sum())
    if count < MIN_SHELL_COUNT:
        suggested = eps * (4.0 * MIN_SHELL_COUNT / count if count else 10.0)
        raise BandwidthError(f"only {count} samples within eps={eps:.4g} of r={r:.4g} (need {MIN_SHELL_COUNT})",
                             suggested_eps=suggested, shell_count=count)
    p = count / m
    chash = config_hash(op="lambda_density", model=_model_fields(model), domain=_domain_fields(domain),
                        x=np.asarray(x, dtype=float), n=grid.level, T=grid.T, m=m, seed=seed, r=r, eps=eps)
    return EstimatorResult(p / (2 * eps), float(np.sqrt(p * (1 - p) / m)) / (2 * eps), m, int(seed), chash,
                           (time.perf_counter() - t0) * 1e3, {"shell_count": count, "eps": eps, "r": r})


def ehrhard_check(lambda_points, m: int | None = None) -> dict:
    """Concavity of S(s) = Phi^{-1}(Lambda(s)) on the supplied CDF points.

    Each interior point gives D_i = S_i - (linear interpolation of its
    neighbours); concavity means D_i >= 0. Points with Lambda in {0, 1} are
    excluded. When ``m`` is given (or can be read off the binomial errors),
    the standard errors use the full covariance of the empirical CDF,
    Cov(F(s_a), F(s_b)) = (F(min) - F(s_a) F(s_b)) / m.
    """
    pts = sorted((float(s), float(p), float(se)) for s, p, se in lambda_points)
    excluded = [s for s, p, _ in pts if p <= 0.0 or p >= 1.0]
    keep = [(s, p, se) for s, p, se in pts if 0.0 < p < 1.0]
    s = np.array([k[0] for k in keep])
    p = np.array([k[1] for k in keep])
    se = np.array([k[2] for k in keep])
    monotone = bool(np.all(np.diff([q for _, q, _ in pts]) >= 0))
    result = {"max_concavity_violation_in_se": float("-inf"), "excluded": excluded, "monotone": monotone,
              "violations": [], "S": [], "s": s.tolist()}
    if s.size < 3:
        return result
    S = ndtri(p)
    result["S"] = S.tolist()
    if m is None:
        m = int(np.median(p * (1 - p) / np.maximum(se, 1e-300) ** 2).round())
    cov_p = (np.minimum.outer(p, p) - np.outer(p, p)) / m
    jac = 1.0 / (np.exp(-0.5 * S * S) / np.sqrt(2 * np.pi))
    cov_S = cov_p * np.outer(jac, jac)
    worst = float("-inf")
    for i in range(1, s.size - 1):
        wl = (s[i + 1] - s[i]) / (s[i + 1] - s[i - 1])
        wr = 1.0 - wl
        c = np.zeros(s.size)
        c[i - 1], c[i], c[i + 1] = -wl, 1.0, -wr
        D = float(c @ S)
        sd = float(np.sqrt(max(c @ cov_S @ c, 0.0)))
        z = -D / sd if sd > 0 else (0.0 if D >= 0 else float("inf"))
        result["violations"].append(z)
        worst = max(worst, z)
    result["max_concavity_violation_in_se"] = worst
    return result
