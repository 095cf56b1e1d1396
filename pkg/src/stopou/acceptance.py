"""End-to-end acceptance suite shared by ``stopou validate`` and the test suite.

Each criterion returns one or more :class:`Row` objects. ``quick=True`` shrinks
sample sizes and levels for a desk-scale smoke run; criterion 9 (the costliest)
is skipped in quick mode, and criterion 12 is driven from the CLI because it
compares two complete ``validate`` runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from . import gradient as grad
from .domain import make_ball_domain
from .matrixcalc import OUModel, check_hypothesis1, expm, gram_Qt, gram_U, kalman_rank, random_model
from .oracles import brownian_survival_discrete_approx, brownian_two_sided_survival
from .pathlaw import (
    DyadicGrid,
    EndpointGaussian,
    LinearFunctional,
    MeanSquareTanh,
    MidpointProduct,
    SineOfLinear,
    gaussian_ibp_residual,
    grid_covariance,
    sample_wa_ar1,
    sample_wa_joint,
)
from .pde import Mesh2D, compare_mc_pde
from .shift import ShiftFamily, ShiftOperator

# stream ids private to the acceptance checks
STREAM_SAMPLER_AR1 = 20
STREAM_SAMPLER_JOINT = 21


@dataclass
class Row:
    criterion: str
    name: str
    passed: bool
    statistic: float
    tolerance: float
    detail: str = ""
    wall_s: float = field(default=0.0, compare=False)
    expected_failure: bool = False

    def status(self) -> str:
        if self.passed:
            return "PASS"
        return "FAIL(expected)" if self.expected_failure else "FAIL"


def _fmt(v) -> str:
    return f"{v:.6g}"


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# 1

def criterion_1(quick=False, workers=1, seed=0):
    model = OUModel.kolmogorov()
    worst = 0.0
    gen = np.random.default_rng(seed)
    for T in (0.5, 1.0, 2.0):
        worst = max(worst, _rel(gram_Qt(model, T), [[T, T**2 / 2], [T**2 / 2, T**3 / 3]]))
        U = gram_U(model, T)
        worst = max(worst, _rel(U, np.array([[6 * T**2, 4 * T**3], [4 * T**3, 3 * T**4]]) / 12.0))
        Uinv = 6.0 / T**2 * np.array([[3.0, -4.0 / T], [-4.0 / T, 6.0 / T**2]])
        worst = max(worst, _rel(np.linalg.inv(U), Uinv))
        op = ShiftOperator(model, T)
        ts = np.linspace(0.0, T, 9)
        for x in gen.normal(size=(3, 2)):
            got = op.u_mat(ts) @ x
            want = np.array([6.0 / T**4 * np.array([[T**2 - 2 * T * s, 2 * (T - 3 * s)], [2 * T, 6.0]]) @ x for s in ts])
            worst = max(worst, _rel(got, want))
    return [Row("1", "golden closed forms", worst <= 1e-9, worst, 1e-9, "max relative error over T in {0.5, 1, 2}")]


# 2

U_COND_MAX = 1e8


def criterion_2(quick=False, workers=1, seed=0):
    # the identity is exact; its computed residual is floored near eps * cond(U),
    # so draws with cond(U) > U_COND_MAX are redrawn and counted
    gen = np.random.default_rng(1000 + seed)
    worst, kept, redrawn = 0.0, 0, 0
    while kept < 50:
        d = int(gen.integers(1, 5))
        model = random_model(gen, d, controllable=True)
        x = gen.normal(size=d)
        T = float(gen.uniform(0.5, 2.0))
        if np.linalg.cond(gram_U(model, T)) > U_COND_MAX:
            redrawn += 1
            continue
        op = ShiftOperator(model, T)
        aT = op.a_mat(np.array([T]))[0] @ x
        worst = max(worst, float(np.linalg.norm(aT - expm(model.A, T) @ x) / np.linalg.norm(x)))
        kept += 1
    return [Row("2", "shift endpoint identity", worst <= 1e-7, worst, 1e-7,
                f"max |a(x,T) - e^{{TA}}x| / |x| over 50 models (cond(U) <= 1e8; {redrawn} redrawn)")]


# 3

def criterion_3(quick=False, workers=1, seed=0):
    gen = np.random.default_rng(2000 + seed)
    bad = 0
    for _ in range(100):
        model = random_model(gen, int(gen.integers(1, 5)))
        rep = check_hypothesis1(model, [1.0], strict=False)
        bad += int(not rep.consistent or rep.kalman_rank_ok != kalman_rank(model))
    return [Row("3", "rank test vs det Q_1", bad == 0, float(bad), 0.0, "disagreements over 100 random models")]


# 4

def _cov_z(values, cov):
    m = values.shape[0]
    H = values.reshape(m, -1)
    emp = H.T @ H / m
    H2 = H * H
    var = (H2.T @ H2 / m - emp**2) / m
    return np.abs(emp - cov) / np.sqrt(np.maximum(var, 1e-300))


def criterion_4(quick=False, workers=1, seed=0):
    m = 20000 if quick else 100000
    n = 3 if quick else 5
    model = OUModel.kolmogorov()
    grid = DyadicGrid(1.0, n)
    gauss = grid_covariance(model, grid, strict=False)
    rows = []
    for name, batch in (("ar1", sample_wa_ar1(model, grid, seed, STREAM_SAMPLER_AR1, m, workers)),
                        ("joint", sample_wa_joint(model, grid, seed, STREAM_SAMPLER_JOINT, m, workers, gauss=gauss))):
        z = float(_cov_z(batch.values, gauss.cov).max())
        rows.append(Row("4", f"sampler law ({name})", z <= 4.0, z, 4.0, f"max |z| over all kernel blocks, m={m}, n={n}"))
    return rows


# 5

def criterion_5(quick=False, workers=1, seed=0):
    m = 20000 if quick else 100000
    model = OUModel.kolmogorov()
    grid = DyadicGrid(1.0, 4)
    N = grid.N
    t = grid.points
    v = np.stack([np.cos(np.pi * t), 0.5 * t], axis=1) / N
    w = np.stack([np.sin(np.pi * t), 1.0 - t], axis=1) * grid.dt
    gauss = grid_covariance(model, grid, strict=False)
    fns = {"linear": LinearFunctional(v), "endpoint_gaussian": EndpointGaussian(), "sine_of_linear": SineOfLinear(3 * v),
           "mean_square_tanh": MeanSquareTanh(), "midpoint_product": MidpointProduct()}
    rows = []
    for k, (name, fn) in enumerate(fns.items()):
        res = gaussian_ibp_residual(model, grid, fn, w, m, seed=seed + k, gauss=gauss)
        r = res["residual_in_se"]
        rows.append(Row("5", f"Gaussian IBP ({name})", r <= 4.0, r, 4.0, f"lhs={_fmt(res['lhs'])} rhs={_fmt(res['rhs'])}"))
    return rows


# 6

STRONG_FELLER_POINTS = ((0.0, 0.0), (0.3, 0.2), (-0.4, 0.1), (0.2, -0.5), (0.5, 0.5))


def criterion_6(quick=False, workers=1, seed=0):
    m = 20000 if quick else 100000
    n = 5 if quick else 7
    model = OUModel.kolmogorov()
    dom = make_ball_domain(1.0, 2)
    grid = DyadicGrid(1.0, n)
    fam = ShiftFamily(model, 1.0, grid)
    phis = {"gauss_bump": est.TestFunction("gauss_bump", center=[0.0, 0.0], width=0.5),
            "halfspace": est.TestFunction("halfspace_indicator", normal=[1.0, 0.0], offset=0.0)}
    rows = []
    for pname, phi in phis.items():
        worst, det = 0.0, ""
        for x in STRONG_FELLER_POINTS:
            a = est.stopped_direct(model, dom, phi, x, 1.0, grid, m, seed, workers)
            b = est.stopped_cm(model, dom, phi, x, 1.0, grid, m, seed, workers, family=fam)
            z = abs(a.mean - b.mean) / np.hypot(a.stderr, b.stderr)
            if z >= worst:
                worst, det = z, f"worst at x={list(x)}: direct={_fmt(a.mean)} cm={_fmt(b.mean)}"
        rows.append(Row("6", f"strong Feller identity ({pname})", worst <= 4.0, worst, 4.0, det))
    return rows


# 7

def criterion_7(quick=False, workers=1, seed=0):
    m = 20000 if quick else 100000
    levels = (4, 6, 8) if quick else (6, 8, 10)
    model = OUModel.brownian(1)
    dom = make_ball_domain(1.0, 1)
    one = est.TestFunction("constant_one")
    exact = brownian_two_sided_survival(1.0, 1.0)
    rows, observed = [], []
    for n in levels:
        res = est.stopped_direct(model, dom, one, [0.0], 1.0, DyadicGrid(1.0, n), m, seed, workers)
        bias = brownian_survival_discrete_approx(1.0, 1.0, 2**n) - exact
        gap = res.mean - exact
        observed.append(gap)
        tol = 3 * res.stderr + abs(bias)
        rows.append(Row("7", f"Brownian oracle (n={n})", abs(gap) <= tol, abs(gap), tol,
                        f"mc={_fmt(res.mean)} exact={_fmt(exact)} predicted_bias={_fmt(bias)}"))
    shrink = bool(np.all(np.diff(np.abs(observed)) < 0))
    rows.append(Row("7", "Brownian oracle bias shrinks", shrink, float(np.abs(observed[-1])), float(np.abs(observed[0])),
                    "observed biases " + " ".join(_fmt(b) for b in observed)))
    return rows


# 8

def criterion_8(quick=False, workers=1, seed=0):
    m = 20000 if quick else 100000
    levels = (4, 6) if quick else (4, 6, 8)
    cases = (
        ("kolmogorov y=e1", OUModel.kolmogorov(), make_ball_domain(1.0, 2), est.TestFunction("gauss_bump", center=[0.0, 0.0], width=0.5),
         [0.3, 0.2], [1.0, 0.0]),
        ("bm x=0.3", OUModel.brownian(1), make_ball_domain(1.0, 1), est.TestFunction("gauss_bump", center=[0.0], width=0.5),
         [0.3], [1.0]),
    )
    rows = []
    for name, model, dom, phi, x, y in cases:
        for n in levels:
            out = grad.discrete_gradient_check(model, dom, phi, x, y, 1.0, DyadicGrid(1.0, n), m, seed, workers=workers)
            rows.append(Row("8", f"discrete gradient ({name}, n={n})", out["passed"], abs(out["diff"]), out["tolerance"],
                            f"full={_fmt(out['full'])} fd={_fmt(out['fd'])} diff_se={_fmt(out['diff_se'])}"))
    return rows


# 9

def gradient_cases():
    bm, b1 = OUModel.brownian(1), make_ball_domain(1.0, 1)
    one = est.TestFunction("constant_one")
    kol, b2 = OUModel.kolmogorov(), make_ball_domain(1.0, 2)
    bump = est.TestFunction("gauss_bump", center=[0.0, 0.0], width=0.5)
    return (
        ("bm x=0", "a", bm, b1, one, [0.0], [1.0]),
        ("bm x=0.3", "a", bm, b1, one, [0.3], [1.0]),
        ("kolmogorov y=e1", "b", kol, b2, bump, [0.3, 0.2], [1.0, 0.0]),
        ("kolmogorov y=e2", "b", kol, b2, bump, [0.3, 0.2], [0.0, 1.0]),
    )


def _within(total, se, fd):
    return abs(total - fd.mean) <= max(3.0 * np.hypot(se, fd.stderr), 0.05 * abs(fd.mean))


def criterion_9(quick=False, workers=1, seed=11, m=200000):
    grid = DyadicGrid(1.0, 7)
    literal = grad.GradConfig(boundary_method="shell", weight_variant="cm_weighted", boundary_sign="plus")
    lit_ok, lit_worst, lit_det = True, 0.0, []
    passes = {}
    for name, group, model, dom, phi, x, y in gradient_cases():
        fd = grad.fd_oracle(model, dom, phi, x, y, 1.0, grid, m, seed, workers=workers)
        g = grad.grad_main(model, dom, phi, x, y, 1.0, grid, m, seed, cfg=literal, workers=workers)
        ok = _within(g.total, g.total_stderr, fd)
        lit_ok &= ok
        z = abs(g.total - fd.mean) / np.hypot(g.total_stderr, fd.stderr)
        lit_worst = max(lit_worst, z)
        lit_det.append(f"{name}: {_fmt(g.total)} vs fd {_fmt(fd.mean)}")
        for r in grad.variant_table(model, dom, phi, x, y, 1.0, grid, m, seed, eps=dom.r / 40.0, workers=workers):
            key = (r["variant"], r["sign"])
            passes.setdefault(key, {}).setdefault(group, True)
            passes[key][group] &= _within(r["total"], r["stderr"], fd)
    winners = [k for k, v in passes.items() if v.get("a") and v.get("b")]
    rows = [
        Row("9", "main gradient formula, literal variant (cm_weighted, plus)", lit_ok, lit_worst, 3.0,
            "; ".join(lit_det), expected_failure=True),
        Row("9", "variant table: exactly one variant passes both configurations", len(winners) == 1, float(len(winners)), 1.0,
            "passing: " + (", ".join("/".join(k) for k in winners) or "none")),
    ]
    return rows


# 10

EHRHARD_S = np.linspace(0.3, 4.0, 20)


def criterion_10(quick=False, workers=1, seed=0):
    m = 20000 if quick else 100000
    levels = (5, 6) if quick else (6, 7, 8)
    model = OUModel.kolmogorov()
    dom = make_ball_domain(1.0, 2)
    x = [0.3, 0.2]
    rows, curves = [], []
    for n in levels:
        grid = DyadicGrid(1.0, n)
        pts = est.lambda_cdf(model, dom, x, grid, m, seed, EHRHARD_S, workers)
        chk = est.ehrhard_check(pts, m)
        curves.append(pts)
        v = chk["max_concavity_violation_in_se"]
        rows.append(Row("10", f"Ehrhard concavity (n={n})", v <= 3.0 and chk["monotone"], v, 3.0,
                        f"monotone_in_s={chk['monotone']} excluded={len(chk['excluded'])}"))
    worst = -np.inf
    for lo, hi in zip(curves, curves[1:]):
        for (s, p0, e0), (_, p1, e1) in zip(lo, hi):
            worst = max(worst, (p1 - p0) / max(np.hypot(e0, e1), 1e-300))
    rows.append(Row("10", "Lambda nonincreasing in n", worst <= 3.0, float(worst), 3.0,
                    "max (Lambda_{n+1} - Lambda_n) / SE over the s-grid"))
    return rows


# 11

PDE_POINTS = ((0.2, 0.1), (0.0, 0.3), (-0.3, -0.2))


def criterion_11(quick=False, workers=1, seed=0):
    m = 20000 if quick else 100000
    nodes = 101 if quick else 201
    level = 8 if quick else 10
    model = OUModel.kolmogorov()
    dom = make_ball_domain(1.0, 2)
    phi = est.TestFunction("gauss_bump", center=[0.0, 0.0], width=0.5)
    out = compare_mc_pde(model, dom, phi, 0.5, PDE_POINTS, Mesh2D.for_domain(dom, nodes), m, seed, level=level, workers=workers)
    rows = []
    for r in out:
        rows.append(Row("11", f"PDE vs MC at x={r['x']}", r["passed"], abs(r["gap"]), r["tolerance"],
                        f"pde={_fmt(r['pde'])} mc={_fmt(r['mc'])} mc_se={_fmt(r['mc_se'])} mesh={nodes} n={level}"))
    return rows


CRITERIA = {
    "1": criterion_1, "2": criterion_2, "3": criterion_3, "4": criterion_4, "5": criterion_5, "6": criterion_6,
    "7": criterion_7, "8": criterion_8, "9": criterion_9, "10": criterion_10, "11": criterion_11,
}
QUICK_SKIP = {"9"}


def run_suite(quick: bool = False, workers: int = 1, only=None, progress=None) -> list:
    """Run the criteria in order and return all rows.

    ``progress`` is called with each row as soon as it is available.
    """
    rows = []
    for key, fn in CRITERIA.items():
        if only is not None and key not in only:
            continue
        if quick and key in QUICK_SKIP:
            continue
        t0 = time.perf_counter()
        out = fn(quick=quick, workers=workers)
        dt = time.perf_counter() - t0
        for r in out:
            r.wall_s = dt / len(out)
            rows.append(r)
            if progress is not None:
                progress(r)
    return rows


def suite_ok(rows) -> bool:
    return all(r.passed or r.expected_failure for r in rows)
