import numpy as np
import pytest
from hypothesis import given, strategies as st

from stopou import _backend
from stopou.domain import (ConvexDomain, gamma_argmax, gamma_grad_dir, gamma_sup, gauge_values,
                           lipschitz_bound, make_ball_domain, make_domain, make_ellipsoid_domain,
                           validate_domain)
from stopou.errors import DomainError, InvalidInputError


def test_ball_and_ellipsoid_pass_validation():
    validate_domain(make_ball_domain(1.0, 3), 3)
    validate_domain(make_ellipsoid_domain(2.0, [[2.0, 0.3], [0.3, 0.5]]), 2)


def test_bad_gauge_rejected():
    # g(0) = 1 and not positive definite around the origin
    bad = ConvexDomain("shifted", lambda x: np.sum(x**2, axis=-1) + 1.0, lambda x: 2 * x, 1.0, (1.0, 2.0), 2.0)
    with pytest.raises(DomainError):
        validate_domain(bad, 2)


def test_understated_bound_radius_rejected():
    dom = ConvexDomain("ball", lambda x: np.sum(x**2, axis=-1), lambda x: 2 * x, 4.0, (1.0, 2.0), 1.0)
    with pytest.raises(DomainError, match="bounding radius"):
        validate_domain(dom, 2)


def test_ellipsoid_input_errors():
    with pytest.raises(InvalidInputError):
        make_ellipsoid_domain(1.0, [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(InvalidInputError):
        make_ellipsoid_domain(1.0, [[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(InvalidInputError):
        make_ellipsoid_domain(1.0, np.ones(3))


def test_make_domain_errors():
    with pytest.raises(InvalidInputError):
        make_domain("cube", 1.0, 2)
    with pytest.raises(InvalidInputError):
        make_domain("ellipsoid", 1.0, 2)
    with pytest.raises(InvalidInputError):
        make_domain("ellipsoid", 1.0, 3, np.eye(2))
    with pytest.raises(InvalidInputError):
        make_ball_domain(0.0, 2)


def test_require_inside(ball2):
    ball2.require_inside([0.6, 0.8])  # closed set: g = r is inside
    with pytest.raises(DomainError):
        ball2.require_inside([0.9, 0.9])


@pytest.mark.skipif(not _backend.compiled_available(), reason="compiled kernels not built")
@pytest.mark.parametrize("domain", [make_ball_domain(1.0, 2), make_ellipsoid_domain(1.5, [[2.0, 0.4], [0.4, 1.0]])])
def test_gamma_argmax_compiled_matches_python(gen, domain):
    paths = gen.normal(size=(300, 16, 2)) * 0.6
    shift = gen.normal(size=(16, 2)) * 0.1
    x0 = np.array([0.2, -0.1])
    got = gamma_argmax(domain, paths, shift, x0)
    vals = gauge_values(domain, paths, shift, x0)
    np.testing.assert_allclose(got[0], vals.max(axis=-1), rtol=1e-13)
    np.testing.assert_array_equal(got[1], np.argmax(vals, axis=-1))


def test_gamma_argmax_tie_goes_to_start(ball2):
    # every state has g = 0.25 = g(x0): the first maximizer j = 0 wins
    x0 = np.array([0.5, 0.0])
    paths = np.tile(np.array([[0.0, 0.5]]), (1, 4, 1))
    gam, j = gamma_argmax(ball2, paths, np.zeros((4, 2)), x0)
    assert j[0] == 0 and gam[0] == pytest.approx(0.25)
    gam1, j1 = gamma_argmax(ball2, paths[0], np.zeros((4, 2)), x0)
    assert j1 == 0


def test_gamma_grad_dir_matches_difference(gen, ball2):
    paths = gen.normal(size=(50, 8, 2)) * 0.4
    shift = np.zeros((8, 2))
    direction = gen.normal(size=(8, 2))
    x0 = np.zeros(2)
    eps = 1e-6
    fd = (gamma_sup(ball2, paths + eps * direction, shift, x0)
          - gamma_sup(ball2, paths - eps * direction, shift, x0)) / (2 * eps)
    an = gamma_grad_dir(ball2, paths, shift, x0, direction)
    np.testing.assert_allclose(an, fd, atol=1e-6)


@given(st.integers(0, 10_000), st.floats(0.01, 2.0))
def test_lipschitz_bound_holds(seed, scale):
    dom = make_ellipsoid_domain(1.0, [[1.5, 0.2], [0.2, 0.7]])
    g = np.random.default_rng(seed)
    k = g.normal(size=(9, 2)) * scale
    k1 = k + g.normal(size=(9, 2)) * 0.1 * scale
    gap = abs(gauge_values(dom, k[1:], 0.0, k[0]).max() - gauge_values(dom, k1[1:], 0.0, k1[0]).max())
    assert gap <= lipschitz_bound(dom, k, k1) + 1e-12
