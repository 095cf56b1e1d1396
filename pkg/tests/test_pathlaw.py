import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stopou.errors import ConditioningError, InvalidInputError
from stopou.matrixcalc import OUModel, kernel_K, random_model
from stopou.pathlaw import (
    DyadicGrid,
    EndpointGaussian,
    LinearFunctional,
    MeanSquareTanh,
    MidpointProduct,
    PathBatch,
    SineOfLinear,
    StepLaw,
    gaussian_ibp_residual,
    grid_covariance,
    kernel_blocks,
    lower_factor,
    mean_path,
    rayleigh_quotient,
    sample_wa_ar1,
    sample_wa_joint,
    sample_X,
)


def test_grid_points_end_exactly_at_T():
    g = DyadicGrid(0.7, 5)
    assert g.N == 32 and g.points[-1] == 0.7
    assert g.refine().N == 64
    np.testing.assert_allclose(np.diff(g.points), g.dt)


@pytest.mark.parametrize("T,level", [(0.0, 1), (-1.0, 1), (1.0, -1), (1.0, 1.5)])
def test_grid_rejects_bad_input(T, level):
    with pytest.raises(InvalidInputError):
        DyadicGrid(T, level)


def test_kernel_blocks_level1_exact(kol):
    # K(1/2,1/2) = Q_{1/2}; K(1,1/2) = e^{A/2} Q_{1/2}; K(1,1) = Q_1
    b = kernel_blocks(kol, DyadicGrid(1.0, 1))
    Qh = np.array([[0.5, 0.125], [0.125, 1 / 24]])
    np.testing.assert_allclose(b[0, 0], Qh, rtol=1e-13)
    np.testing.assert_allclose(b[1, 0], np.array([[1, 0], [0.5, 1]]) @ Qh, rtol=1e-13)
    np.testing.assert_allclose(b[0, 1], b[1, 0].T)
    np.testing.assert_allclose(b[1, 1], [[1, 0.5], [0.5, 1 / 3]], rtol=1e-13)


def test_kernel_blocks_match_kernel_K():
    model = random_model(np.random.default_rng(4), 3, controllable=True)
    g = DyadicGrid(1.3, 3)
    b = kernel_blocks(model, g)
    for i, j in [(0, 0), (5, 2), (2, 5), (7, 7)]:
        np.testing.assert_allclose(b[i, j], kernel_K(model, g.points[i], g.points[j]), rtol=1e-10, atol=1e-14)


def test_covariance_conditioning_threshold(kol):
    g8 = grid_covariance(kol, DyadicGrid(1.0, 8))
    assert g8.min_eig > 0
    with pytest.raises(ConditioningError) as err:
        grid_covariance(kol, DyadicGrid(1.0, 9))
    assert err.value.log_condition > 12
    assert grid_covariance(kol, DyadicGrid(1.0, 9), strict=False).factor.shape == (1024, 1024)


def test_grid_gaussian_solve_and_block(kol):
    gg = grid_covariance(kol, DyadicGrid(1.0, 3))
    v = np.arange(16.0)
    np.testing.assert_allclose(gg.cov @ gg.solve(v), v, atol=1e-8)
    np.testing.assert_allclose(gg.inv @ gg.cov, np.eye(16), atol=1e-6)
    np.testing.assert_allclose(gg.block(8, 8), [[1, 0.5], [0.5, 1 / 3]], rtol=1e-12)


@given(st.integers(1, 4), st.integers(0, 10_000))
def test_lower_factor_handles_singular(d, seed):
    gen = np.random.default_rng(seed)
    B = gen.normal(size=(d, int(gen.integers(1, d + 1))))
    Q = B @ B.T
    L = lower_factor(Q)
    assert np.allclose(np.triu(L, 1), 0)
    np.testing.assert_allclose(L @ L.T, Q, atol=1e-9 * max(1, np.abs(Q).max()))


def _emp_cov_z(values, cov):
    m = values.shape[0]
    H = values.reshape(m, -1)
    emp = H.T @ H / m
    var = ((H * H).T @ (H * H) / m - emp**2) / m
    return np.abs(emp - cov) / np.sqrt(var)


@pytest.mark.parametrize("sampler", ["ar1", "joint"])
def test_sampler_covariance_small(kol, sampler):
    g = DyadicGrid(1.0, 2)
    gg = grid_covariance(kol, g)
    fn = sample_wa_ar1 if sampler == "ar1" else sample_wa_joint
    batch = fn(kol, g, 3, 9, 40000)
    assert batch.values.shape == (40000, 4, 2)
    assert _emp_cov_z(batch.values, gg.cov).max() < 4.5
    assert np.abs(batch.values.mean(axis=0)).max() < 0.05


def test_sample_X_adds_mean(kol):
    g = DyadicGrid(1.0, 3)
    x = np.array([0.3, -0.1])
    a = sample_X(kol, x, g, 1, 2, 10)
    b = sample_wa_ar1(kol, g, 1, 2, 10)
    np.testing.assert_allclose(a.values - b.values, np.broadcast_to(mean_path(kol, x, g), a.values.shape))
    with pytest.raises(InvalidInputError):
        sample_X(kol, x, g, 1, 2, 10, sampler="nope")
    with pytest.raises(InvalidInputError):
        sample_X(kol, [0.0], g, 1, 2, 10)


@pytest.mark.parametrize("workers", [2, 3])
def test_samples_independent_of_workers(kol, workers):
    g = DyadicGrid(1.0, 4)
    base = sample_wa_ar1(kol, g, 5, 1, 9000, workers=1).values
    np.testing.assert_array_equal(sample_wa_ar1(kol, g, 5, 1, 9000, workers=workers).values, base)


def test_path_batch_binary_roundtrip(tmp_path, kol):
    batch = sample_wa_ar1(kol, DyadicGrid(0.5, 3), 7, 4, 5)
    p = tmp_path / "b.bin"
    batch.to_binary(p)
    back = PathBatch.from_binary(p)
    np.testing.assert_array_equal(back.values, batch.values)
    assert (back.seed, back.stream_id, back.grid) == (7, 4, batch.grid)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"x" * 80)
    with pytest.raises(InvalidInputError):
        PathBatch.from_binary(bad)


def test_path_batch_csv(tmp_path, kol):
    batch = sample_wa_ar1(kol, DyadicGrid(1.0, 1), 0, 1, 2)
    p = tmp_path / "b.csv"
    batch.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "path_id,j,t,x_1,x_2"
    assert len(lines) == 1 + 2 * 2
    assert float(lines[-1].split(",")[3]) == batch.values[1, 1, 0]


def test_step_law_factor(kol):
    st_ = StepLaw.build(kol, DyadicGrid(1.0, 3))
    np.testing.assert_allclose(st_.chol @ st_.chol.T, st_.Q_step, atol=1e-15)


@pytest.mark.parametrize("fn", [
    LinearFunctional(np.full((8, 2), 0.1)),
    EndpointGaussian(),
    SineOfLinear(np.full((8, 2), 0.2)),
    MeanSquareTanh(),
    MidpointProduct(),
], ids=lambda f: type(f).__name__)
def test_functional_directional_matches_difference(fn):
    gen = np.random.default_rng(0)
    h = gen.normal(size=(3, 8, 2))
    eta = gen.normal(size=(8, 2))
    eps = 1e-6
    fd = (fn.value(h + eps * eta) - fn.value(h - eps * eta)) / (2 * eps)
    np.testing.assert_allclose(fn.directional(h, eta), fd, rtol=1e-6, atol=1e-8)


def test_gaussian_ibp_small(kol):
    g = DyadicGrid(1.0, 3)
    w = np.ones((8, 2)) * g.dt
    res = gaussian_ibp_residual(kol, g, SineOfLinear(np.full((8, 2), 0.3)), w, 20000, seed=1)
    assert res["residual_in_se"] < 4


def test_rayleigh_quotient_bounds(kol):
    gg = grid_covariance(kol, DyadicGrid(1.0, 4))
    h = np.random.default_rng(0).normal(size=(16, 2))
    q = rayleigh_quotient(gg, h)
    assert gg.grid.dt * gg.eigvals[0] - 1e-15 <= q <= gg.grid.dt * gg.eigvals[-1] + 1e-15
