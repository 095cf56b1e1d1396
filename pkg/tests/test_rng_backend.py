import numpy as np
import pytest

from stopou import _backend, _kernels_py, rng
from stopou.matrixcalc import OUModel
from stopou.pathlaw import DyadicGrid, StepLaw

# frozen draws: the counter layout is part of the reproducibility contract
FROZEN_0_1 = np.array([[-0.75283577, 0.05860784, 0.93999694],
                       [-1.19151741, -0.94054152, 1.16297669]])


def test_normals_frozen_values():
    np.testing.assert_allclose(rng.normals(0, 1, 0, 2, 3), FROZEN_0_1, atol=1e-8)


def test_path_slices_are_consistent():
    full = rng.normals(3, 2, 0, 100, 5)
    np.testing.assert_array_equal(rng.normals(3, 2, 37, 61, 5), full[37:61])


def test_streams_and_seeds_differ():
    a = rng.normals(0, 1, 0, 10, 4)
    assert not np.allclose(a, rng.normals(0, 2, 0, 10, 4))
    assert not np.allclose(a, rng.normals(1, 1, 0, 10, 4))


def test_uniforms_open_interval():
    u = rng.uniforms(0, 0, 0, 1000, 7)
    assert u.min() > 0 and u.max() < 1


def test_rng_rejects_negative():
    with pytest.raises(ValueError):
        rng.stream_key(-1, 0)
    with pytest.raises(ValueError):
        rng.uniforms(0, 0, 5, 4, 1)


def test_blocks_cover_range():
    assert rng.blocks(10, 4) == [(0, 4), (4, 8), (8, 10)]
    assert rng.blocks(0, 4) == []


def _inputs(seed=0, b=64, level=5):
    model = OUModel.kolmogorov()
    grid = DyadicGrid(1.0, level)
    step = StepLaw.build(model, grid)
    z = rng.normals(seed, 1, 0, b, grid.N * 2).reshape(b, grid.N, 2)
    shift = np.random.default_rng(seed).normal(size=(grid.N, 2)) * 0.3
    lin = np.random.default_rng(seed + 1).normal(size=(2, grid.N, 2))
    return z, step, shift, lin


@pytest.mark.skipif(not _backend.compiled_available(), reason="compiled kernels not built")
def test_compiled_matches_python():
    from stopou import _kernels_c

    z, step, shift, lin = _inputs()
    G = np.array([[1.0, 0.2], [0.2, 2.0]])
    np.testing.assert_allclose(_kernels_c.ar1_paths(z, step.trans, step.chol),
                               _kernels_py.ar1_paths(z, step.trans, step.chol), rtol=1e-13, atol=1e-15)
    c = _kernels_c.ar1_fused(z, step.trans, step.chol, shift, G, lin)
    p = _kernels_py.ar1_fused(z, step.trans, step.chol, shift, G, lin)
    for a, b in zip(c, p):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    paths = _kernels_py.ar1_paths(z, step.trans, step.chol)
    gc, jc = _kernels_c.gauge_max_quadratic(paths, shift, G)
    gp, jp = _kernels_py.gauge_max_quadratic(paths, shift, G)
    np.testing.assert_allclose(gc, gp, rtol=1e-13)
    np.testing.assert_array_equal(jc, jp)


def test_first_maximizer_on_ties():
    paths = np.zeros((1, 4, 1))
    shift = np.array([[1.0], [2.0], [-2.0], [0.5]])
    g, j = _kernels_py.gauge_max_quadratic(paths, shift, np.eye(1))
    assert g[0] == 4.0 and j[0] == 2
    if _backend.compiled_available():
        from stopou import _kernels_c

        g, j = _kernels_c.gauge_max_quadratic(paths, shift, np.eye(1))
        assert j[0] == 2


def test_use_backend_switch():
    before = _backend.backend_name()
    try:
        _backend.use_backend("python")
        assert _backend.kernels() is _kernels_py
        with pytest.raises(ValueError):
            _backend.use_backend("fortran")
    finally:
        _backend.use_backend("cython" if before == "cython" else "python")
