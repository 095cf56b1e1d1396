"""Estimators of the spatial gradient D_x R_T^{O_r} phi(x) . y of the stopped semigroup.

Three independent routes:

* ``grad_main``: interior term plus a boundary term concentrated on the shell
  {|Gamma_n(h + d(x,.)) - r| <= eps}.
* ``grad_discrete_full``: the exact derivative of the discrete semigroup,
  which carries the factor <Q_{T,n}^{-1} d(y,.), h> and so needs the explicit
  grid inverse (n <= 8).
* ``fd_oracle``: central finite differences of ``stopped_direct`` with
  common random numbers.

Stream ids: 10 interior, 11 boundary, 12 finite differences, 13 discrete
gradient, 14 gradient ceiling; the density factor of the conditional boundary
estimator reuses the Lambda stream (5).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng
from ._backend import kernels
from .domain import ConvexDomain
from .engine import PathSummary, simulate_summaries
from .errors import BandwidthError, ConditioningError, InvalidInputError
from .estimators import (
    MIN_SHELL_COUNT,
    EstimatorResult,
    TestFunction,
    _domain_fields,
    _model_fields,
    cm_log_weights,
    config_hash,
    lambda_density,
)
from .matrixcalc import OUModel, expm_many
from .pathlaw import DyadicGrid, StepLaw, grid_covariance, map_blocks
from .shift import ShiftFamily

STREAM_INTERIOR = 10
STREAM_BOUNDARY = 11
STREAM_FD = 12
STREAM_DISCRETE = 13
STREAM_CEILING = 14

FULL_MAX_LEVEL = 8
BOUNDARY_METHODS = ("shell", "conditional_times_density")
WEIGHT_VARIANTS = ("cm_weighted", "unweighted")
SIGNS = ("plus", "minus")


@dataclass(frozen=True)
class GradConfig:
    """Boundary-term options.

    ``shell_eps`` and ``fd_step`` default to r/40 and 0.05 sqrt(r) when None.
    The default variant is the one adjudicated by the finite-difference oracle
    (weighted shell term entering with a minus sign).
    """

    boundary_method: str = "shell"
    shell_eps: float | None = None
    weight_variant: str = "cm_weighted"
    boundary_sign: str = "minus"
    fd_step: float | None = None

    def __post_init__(self):
        if self.boundary_method not in BOUNDARY_METHODS:
            raise InvalidInputError(f"boundary_method must be one of {BOUNDARY_METHODS}")
        if self.weight_variant not in WEIGHT_VARIANTS:
            raise InvalidInputError(f"weight_variant must be one of {WEIGHT_VARIANTS}")
        if self.boundary_sign not in SIGNS:
            raise InvalidInputError(f"boundary_sign must be one of {SIGNS}")
        if self.shell_eps is not None and not self.shell_eps > 0:
            raise InvalidInputError("shell_eps must be > 0")
        if self.fd_step is not None and not self.fd_step > 0:
            raise InvalidInputError("fd_step must be > 0")

    def eps(self, r: float) -> float:
        return r / 40.0 if self.shell_eps is None else float(self.shell_eps)

    def delta(self, r: float) -> float:
        return 0.05 * float(np.sqrt(r)) if self.fd_step is None else float(self.fd_step)

    @property
    def sign_value(self) -> float:
        return 1.0 if self.boundary_sign == "plus" else -1.0


@dataclass
class GradResult:
    interior: EstimatorResult
    boundary: EstimatorResult
    total: float
    total_stderr: float
    shell_count: int
    info: dict = field(default_factory=dict)


class _Setup:
    """Shift data and directional pieces shared by the gradient estimators."""

    def __init__(self, model, domain, x, y, T, grid, family=None):
        if abs(grid.T - T) > 1e-14 * max(1.0, T):
            raise InvalidInputError("grid horizon differs from T")
        self.model, self.domain, self.grid, self.T = model, domain, grid, float(T)
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.x.shape != (model.dim,) or self.y.shape != (model.dim,):
            raise InvalidInputError(f"x and y must have shape ({model.dim},)")
        domain.require_inside(self.x)
        self.family = ShiftFamily(model, T, grid) if family is None else family
        self.sd = self.family.data(self.x)
        der = self.family.derivatives(self.x, self.y)
        self.Fx_y = der["Fx_y"]
        self.dxy = der["dxy"]
        self.u_y = self.family.u_mats @ self.y
        # direction of the shifted state at j = 0..N; d(y, 0) = y
        self.dir_full = np.vstack([self.y[None, :], self.dxy])

    def summaries(self, seed, stream, m, workers, extra_lin=()) -> PathSummary:
        lin = np.stack([self.grid.dt * self.sd.u_vals, self.grid.dt * self.u_y, *extra_lin])
        return simulate_summaries(self.model, self.grid, self.sd.d_vals, self.domain, self.x, lin,
                                  seed, stream, m, workers)

    def weights(self, s: PathSummary) -> np.ndarray:
        logw, _ = cm_log_weights(self.sd, s.lin[:, 0])
        return np.exp(logw)

    def gamma_dir(self, s: PathSummary) -> np.ndarray:
        """Gamma_n' . d(y, .) at the first maximizing index."""
        return np.sum(self.domain.g_grad(s.kstar) * self.dir_full[s.jstar], axis=-1)

    def chash(self, op, phi, m, seed, **extra):
        return config_hash(op=op, model=_model_fields(self.model), domain=_domain_fields(self.domain),
                           phi=phi.describe(), x=self.x, y=self.y, T=self.T, n=self.grid.level,
                           m=m, seed=seed, **extra)


def _interior_values(st: _Setup, phi, s: PathSummary) -> np.ndarray:
    alive = s.gamma <= st.domain.r
    return alive * phi(s.hT) * st.weights(s) * (-0.5 * st.Fx_y + s.lin[:, 1])


def interior_term(model: OUModel, domain: ConvexDomain, phi: TestFunction, x, y, T: float,
                  grid: DyadicGrid, m: int, seed: int, workers: int = 1, setup: _Setup | None = None) -> EstimatorResult:
    """Mean of 1{Gamma_n <= r} phi(h(T)) exp(-F/2 + G^n) (-F_x(x)y / 2 + G^n(y, h))."""
    t0 = time.perf_counter()
    st = _Setup(model, domain, x, y, T, grid) if setup is None else setup
    s = st.summaries(seed, STREAM_INTERIOR, m, workers)
    vals = _interior_values(st, phi, s)
    return EstimatorResult.from_samples(vals, seed, st.chash("interior_term", phi, m, seed), t0)


def _shell_values(st: _Setup, phi, s: PathSummary, eps: float):
    """Per-path shell integrand without the 1/(2 eps) factor: (weighted, unweighted, in_shell)."""
    r = st.domain.r
    shell = np.abs(s.gamma - r) <= eps
    base = shell * phi(s.hT) * st.gamma_dir(s)
    return base * st.weights(s), base, shell


def _shell_result(vals, eps, shell, seed, chash, t0, variant) -> EstimatorResult:
    count = int(shell.sum())
    info = {"shell_count": count, "eps": eps, "weight_variant": variant}
    if count == 0:
        warnings.warn("boundary shell is empty; boundary term set to 0", RuntimeWarning, stacklevel=3)
        return EstimatorResult(0.0, 0.0, vals.size, int(seed), chash, (time.perf_counter() - t0) * 1e3,
                               {**info, "empty_shell": True})
    if count < MIN_SHELL_COUNT:
        raise BandwidthError(f"only {count} paths in the shell of half-width {eps:.4g} (need {MIN_SHELL_COUNT})",
                             suggested_eps=eps * 4.0 * MIN_SHELL_COUNT / count, shell_count=count)
    return EstimatorResult.from_samples(vals / (2.0 * eps), seed, chash, t0, **info)


def boundary_shell(model: OUModel, domain: ConvexDomain, phi: TestFunction, x, y, T: float,
                   grid: DyadicGrid, m: int, seed: int, eps: float | None = None,
                   weight_variant: str = "cm_weighted", workers: int = 1,
                   setup: _Setup | None = None) -> EstimatorResult:
    """(1/2 eps) E[1{|Gamma_n - r| <= eps} phi(h(T)) [weight] Gamma_n' . d(y, .)] (unsigned)."""
    t0 = time.perf_counter()
    if weight_variant not in WEIGHT_VARIANTS:
        raise InvalidInputError(f"weight_variant must be one of {WEIGHT_VARIANTS}")
    st = _Setup(model, domain, x, y, T, grid) if setup is None else setup
    eps = domain.r / 40.0 if eps is None else float(eps)
    s = st.summaries(seed, STREAM_BOUNDARY, m, workers)
    weighted, plain, shell = _shell_values(st, phi, s, eps)
    vals = weighted if weight_variant == "cm_weighted" else plain
    return _shell_result(vals, eps, shell, seed, st.chash("boundary_shell", phi, m, seed, eps=eps, variant=weight_variant),
                         t0, weight_variant)


def boundary_conditional(model: OUModel, domain: ConvexDomain, phi: TestFunction, x, y, T: float,
                         grid: DyadicGrid, m: int, seed: int, eps: float | None = None,
                         weight_variant: str = "cm_weighted", workers: int = 1,
                         setup: _Setup | None = None) -> EstimatorResult:
    """Shell average of phi [weight] Gamma' . d(y,.) times the density of Gamma_n at r.

    The conditional mean comes from the boundary stream and the density from
    the independent Lambda stream; the stderr is the delta-method product
    error sqrt(D^2 se_A^2 + A^2 se_D^2).
    """
    t0 = time.perf_counter()
    st = _Setup(model, domain, x, y, T, grid) if setup is None else setup
    eps = domain.r / 40.0 if eps is None else float(eps)
    s = st.summaries(seed, STREAM_BOUNDARY, m, workers)
    weighted, plain, shell = _shell_values(st, phi, s, eps)
    vals = (weighted if weight_variant == "cm_weighted" else plain)[shell]
    count = int(shell.sum())
    chash = st.chash("boundary_conditional", phi, m, seed, eps=eps, variant=weight_variant)
    if count == 0:
        warnings.warn("boundary shell is empty; boundary term set to 0", RuntimeWarning, stacklevel=2)
        return EstimatorResult(0.0, 0.0, m, int(seed), chash, (time.perf_counter() - t0) * 1e3,
                               {"shell_count": 0, "eps": eps, "empty_shell": True})
    if count < MIN_SHELL_COUNT:
        raise BandwidthError(f"only {count} paths in the shell of half-width {eps:.4g} (need {MIN_SHELL_COUNT})",
                             suggested_eps=eps * 4.0 * MIN_SHELL_COUNT / count, shell_count=count)
    cond = float(np.mean(vals))
    cond_se = float(np.std(vals, ddof=1) / np.sqrt(count))
    dens = lambda_density(model, domain, st.x, grid, m, seed, r=domain.r, eps=eps, workers=workers,
                          gammas=None)
    mean = cond * dens.mean
    se = float(np.sqrt((dens.mean * cond_se) ** 2 + (cond * dens.stderr) ** 2))
    return EstimatorResult(mean, se, m, int(seed), chash, (time.perf_counter() - t0) * 1e3,
                           {"shell_count": count, "eps": eps, "conditional_mean": cond, "conditional_se": cond_se,
                            "density": dens.mean, "density_se": dens.stderr, "weight_variant": weight_variant})


def grad_main(model: OUModel, domain: ConvexDomain, phi: TestFunction, x, y, T: float, grid: DyadicGrid,
              m: int, seed: int, cfg: GradConfig | None = None, workers: int = 1,
              ceiling: bool = False) -> GradResult:
    """Interior term plus the signed boundary term selected by ``cfg``."""
    cfg = GradConfig() if cfg is None else cfg
    st = _Setup(model, domain, x, y, T, grid)
    eps = cfg.eps(domain.r)
    inner = interior_term(model, domain, phi, x, y, T, grid, m, seed, workers, setup=st)
    if cfg.boundary_method == "shell":
        bnd = boundary_shell(model, domain, phi, x, y, T, grid, m, seed, eps, cfg.weight_variant, workers, setup=st)
    else:
        bnd = boundary_conditional(model, domain, phi, x, y, T, grid, m, seed, eps, cfg.weight_variant, workers, setup=st)
    total = inner.mean + cfg.sign_value * bnd.mean
    info = {"method": cfg.boundary_method, "variant": cfg.weight_variant, "sign": cfg.boundary_sign, "eps": eps}
    if ceiling:
        info["ceiling"] = gradient_ceiling(st, phi, m=min(m, 20000), seed=seed, eps=eps, workers=workers)
    return GradResult(inner, bnd, float(total), float(np.hypot(inner.stderr, bnd.stderr)),
                      int(bnd.info.get("shell_count", 0)), info)


def variant_table(model: OUModel, domain: ConvexDomain, phi: TestFunction, x, y, T: float, grid: DyadicGrid,
                  m: int, seed: int, eps: float | None = None, workers: int = 1) -> list:
    """grad_main totals for every (weight variant, sign), sharing one interior and one shell sample."""
    st = _Setup(model, domain, x, y, T, grid)
    eps = domain.r / 40.0 if eps is None else float(eps)
    inner = interior_term(model, domain, phi, x, y, T, grid, m, seed, workers, setup=st)
    t0 = time.perf_counter()
    s = st.summaries(seed, STREAM_BOUNDARY, m, workers)
    weighted, plain, shell = _shell_values(st, phi, s, eps)
    rows = []
    for variant, vals in (("cm_weighted", weighted), ("unweighted", plain)):
        bnd = _shell_result(vals, eps, shell, seed, st.chash("boundary_shell", phi, m, seed, eps=eps, variant=variant),
                            t0, variant)
        for sign in SIGNS:
            sv = 1.0 if sign == "plus" else -1.0
            rows.append({"variant": variant, "sign": sign, "interior": inner.mean, "interior_se": inner.stderr,
                         "boundary": bnd.mean, "boundary_se": bnd.stderr,
                         "total": inner.mean + sv * bnd.mean, "stderr": float(np.hypot(inner.stderr, bnd.stderr)),
                         "shell_count": int(shell.sum())})
    return rows


def grid_inverse_direction(st: _Setup, strict: bool = True) -> np.ndarray:
    """Q_{T,n}^{-1} d(y, .) reshaped to (N, d)."""
    if st.grid.level > FULL_MAX_LEVEL:
        raise ConditioningError(f"explicit grid inverse is capped at level {FULL_MAX_LEVEL} (got {st.grid.level})")
    gauss = grid_covariance(st.model, st.grid, strict=strict)
    return gauss.solve(st.dxy.reshape(-1)).reshape(st.grid.N, st.model.dim)


def _full_values(st: _Setup, phi, s: PathSummary) -> np.ndarray:
    alive = s.gamma <= st.domain.r
    g_h = st.grid.dt * float(np.sum(st.sd.u_vals * st.dxy))  # G^n(x, d(y, .))
    return alive * phi(s.hT) * st.weights(s) * (-0.5 * st.Fx_y + s.lin[:, 1] - g_h + s.lin[:, 2])


def grad_discrete_full(model: OUModel, domain: ConvexDomain, phi: TestFunction, x, y, T: float,
                       grid: DyadicGrid, m: int, seed: int, workers: int = 1) -> GradResult:
    """Exact derivative of the discrete semigroup R_{T,n} phi(x) along y.

    Per path: 1{Gamma_n <= r} phi(h(T)) w (-F_x y / 2 + G^n(y,h) - G^n(x, d(y,.)) + <Q_{T,n}^{-1} d(y,.), h>).
    Returned as ``interior`` (everything except the last factor) and
    ``boundary`` (the grid-inverse factor), both from the same draws; the
    total stderr is that of the per-path sum.
    """
    t0 = time.perf_counter()
    st = _Setup(model, domain, x, y, T, grid)
    v = grid_inverse_direction(st)
    s = st.summaries(seed, STREAM_DISCRETE, m, workers, extra_lin=(v,))
    alive = s.gamma <= domain.r
    pw = alive * phi(s.hT) * st.weights(s)
    g_h = grid.dt * float(np.sum(st.sd.u_vals * st.dxy))
    m1 = pw * (-0.5 * st.Fx_y + s.lin[:, 1] - g_h)
    m2 = pw * s.lin[:, 2]
    chash = st.chash("grad_discrete_full", phi, m, seed)
    r1 = EstimatorResult.from_samples(m1, seed, chash, t0, part="M1")
    r2 = EstimatorResult.from_samples(m2, seed, chash, t0, part="M2")
    tot = m1 + m2
    return GradResult(r1, r2, float(np.mean(tot)), float(np.std(tot, ddof=1) / np.sqrt(m)), 0,
                      {"method": "discrete_full", "cm_norm_dy": float(st.dxy.reshape(-1) @ v.reshape(-1))})


def _direct_values(model, domain, phi, x, grid, seed, stream, m, workers):
    mean_path = expm_many(model.A, grid.points) @ x
    s = simulate_summaries(model, grid, mean_path, domain, x, np.zeros((0, grid.N, model.dim)), seed, stream, m, workers)
    return phi(s.hT + mean_path[-1]) * (s.gamma <= domain.r)


def _cm_values(family, domain, phi, x, grid, seed, stream, m, workers):
    sd = family.data(x)
    s = simulate_summaries(family.op.model, grid, sd.d_vals, domain, x, (grid.dt * sd.u_vals)[None],
                           seed, stream, m, workers)
    logw, _ = cm_log_weights(sd, s.lin[:, 0])
    return phi(s.hT) * (s.gamma <= domain.r) * np.exp(logw)


def _central_difference(values_at, x, y, delta):
    plus = values_at(x + delta * y)
    minus = values_at(x - delta * y)
    return (plus - minus) / (2.0 * delta)


def fd_oracle(model: OUModel, domain: ConvexDomain, phi: TestFunction, x, y, T: float, grid: DyadicGrid,
              m: int, seed: int, delta: float | None = None, workers: int = 1, stream: int = STREAM_FD,
              estimator: str = "direct", family: ShiftFamily | None = None) -> EstimatorResult:
    """CRN central difference (R(x + delta y) - R(x - delta y)) / (2 delta).

    ``estimator`` picks ``stopped_direct`` ("direct") or ``stopped_cm``
    ("cm"). The same draws are reused at step 2 delta for the bias report:
    with an O(delta^2) error, bias(delta) ~ (FD(2 delta) - FD(delta)) / 3.
    """
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    delta = 0.05 * float(np.sqrt(domain.r)) if delta is None else float(delta)
    for z in (x + delta * y, x - delta * y):
        domain.require_inside(z)
    if estimator == "direct":
        values_at = lambda z: _direct_values(model, domain, phi, z, grid, seed, stream, m, workers)
    elif estimator == "cm":
        family = ShiftFamily(model, T, grid) if family is None else family
        values_at = lambda z: _cm_values(family, domain, phi, z, grid, seed, stream, m, workers)
    else:
        raise InvalidInputError("estimator must be 'direct' or 'cm'")
    vals = _central_difference(values_at, x, y, delta)
    info = {"delta": delta, "estimator": estimator}
    two = x + 2 * delta * y, x - 2 * delta * y
    if all(domain.contains(z) for z in two):
        fd2 = float(np.mean(_central_difference(values_at, x, y, 2 * delta)))
        info["fd_2delta"] = fd2
        info["bias_estimate"] = (fd2 - float(np.mean(vals))) / 3.0
    chash = config_hash(op="fd_oracle", model=_model_fields(model), domain=_domain_fields(domain),
                        phi=phi.describe(), x=x, y=y, T=T, n=grid.level, m=m, seed=seed, delta=delta,
                        estimator=estimator)
    return EstimatorResult.from_samples(vals, seed, chash, t0, **info)


def discrete_gradient_check(model: OUModel, domain: ConvexDomain, phi: TestFunction, x, y, T: float,
                            grid: DyadicGrid, m: int, seed: int, delta: float | None = None, workers: int = 1) -> dict:
    """grad_discrete_full against the CRN finite difference of stopped_cm on the same draws.

    Both estimators consume stream 13 path for path, so the comparison uses
    the stderr of the per-path difference.
    """
    st = _Setup(model, domain, x, y, T, grid)
    delta = 0.05 * float(np.sqrt(domain.r)) if delta is None else float(delta)
    v = grid_inverse_direction(st)
    s = st.summaries(seed, STREAM_DISCRETE, m, workers, extra_lin=(v,))
    full = _full_values(st, phi, s)
    values_at = lambda z: _cm_values(st.family, domain, phi, z, grid, seed, STREAM_DISCRETE, m, workers)
    fd = _central_difference(values_at, st.x, st.y, delta)
    fd2 = _central_difference(values_at, st.x, st.y, 2 * delta)
    diff = full - fd
    bias = abs(float(np.mean(fd2) - np.mean(fd))) / 3.0
    out = {
        "level": grid.level,
        "full": float(np.mean(full)), "full_se": float(np.std(full, ddof=1) / np.sqrt(m)),
        "fd": float(np.mean(fd)), "fd_se": float(np.std(fd, ddof=1) / np.sqrt(m)),
        "fd_2delta": float(np.mean(fd2)), "delta": delta,
        "diff": float(np.mean(diff)), "diff_se": float(np.std(diff, ddof=1) / np.sqrt(m)),
        "fd_bias_bound": bias,
    }
    out["tolerance"] = max(3.0 * out["diff_se"], out["fd_bias_bound"])
    out["passed"] = abs(out["diff"]) <= out["tolerance"]
    return out


def gradient_ceiling(st: _Setup, phi: TestFunction, m: int, seed: int, eps: float, workers: int = 1) -> dict:
    """Model-constant ceiling on |gradient| built from moment and boundary-density bounds.

    ceiling = ||phi|| ( exp(-F/2) E[1{Gamma_n <= r} exp(c_T T |x| |h|_E) (|F_x y|/2 + T c_T |y| |h|_E)]
                        + sup_{g <= r + eps} |g'| max_j |d(y, t_j)| K_r ),
    where |h|_E = max_j |h(t_j)| and K_r is the largest estimated density of
    Gamma_n over shells at r and r/2, 3r/2.
    """
    grid, model = st.grid, st.model
    N, d = grid.N, model.dim
    step = StepLaw.build(model, grid)
    op = st.family.op
    cT = op.c_T
    xnorm = float(np.linalg.norm(st.x))
    ynorm = float(np.linalg.norm(st.y))
    k = kernels()

    def run(a, b):
        z = rng.normals(seed, STREAM_CEILING, a, b, N * d).reshape(b - a, N, d)
        paths = k.ar1_paths(z, step.trans, step.chol)
        sup = np.linalg.norm(paths, axis=-1).max(axis=-1)
        gam = np.maximum(st.domain.g(paths + st.sd.d_vals[None]).max(axis=-1), float(st.domain.g(st.x)))
        return np.stack([sup, gam])

    parts = np.concatenate(map_blocks(run, m, workers), axis=1)
    sup, gam = parts
    alive = gam <= st.domain.r
    moment = np.mean(alive * np.exp(cT * grid.T * xnorm * sup) * (0.5 * abs(st.Fx_y) + grid.T * cT * ynorm * sup))
    dens = []
    for level in (0.5 * st.domain.r, st.domain.r, 1.5 * st.domain.r):
        inside = np.abs(gam - level) <= eps
        dens.append(inside.mean() / (2 * eps))
    K_r = float(max(dens))
    radius = st.domain.bound_radius * np.sqrt(1.0 + eps / st.domain.r)
    if st.domain.quad_matrix is not None:
        gsup = 2.0 * float(np.linalg.eigvalsh(st.domain.quad_matrix)[-1]) * radius
    else:
        gsup = st.domain.grad_sup
    dmax = float(np.linalg.norm(st.dir_full, axis=1).max())
    bound = phi.sup * (float(np.exp(-0.5 * st.sd.F)) * float(moment) + gsup * dmax * K_r)
    return {"ceiling": bound, "c_T": cT, "K_r": K_r, "moment": float(moment), "m": m}
