import numpy as np
import pytest
from scipy.special import ndtr

from stopou.domain import make_ball_domain
from stopou.errors import BandwidthError, DomainError, InvalidInputError
from stopou.estimators import (TestFunction, cm_weight_mean, config_hash, ehrhard_check, lambda_cdf,
                               lambda_density, stopped_cm, stopped_direct, unstopped_cm, unstopped_direct)
from stopou.pathlaw import DyadicGrid

X = np.array([0.3, 0.2])
# E phi(X_1) for the bump of width 0.5 at 0, X_1 ~ N(e^{A} x, Q_1), closed form
UNSTOPPED_BUMP = 0.28857831048319377


def test_config_hash_frozen():
    assert config_hash(op="x", a=1, b=[1.5, 2.0], c={"k": 0.1}) == "8cad4e99896bc650"
    assert config_hash(a=1, b=2) == config_hash(b=2, a=1)
    assert config_hash(a=np.array([1.0, 2.0])) == config_hash(a=[1.0, 2.0])
    assert config_hash(a=0.1) != config_hash(a=0.1 + 1e-16 * 2)


def test_test_function_kinds():
    xi = np.array([[0.0, 0.0], [1.0, -1.0]])
    np.testing.assert_allclose(TestFunction("gauss_bump", width=1.0)(xi), [1.0, np.exp(-1.0)])
    np.testing.assert_allclose(TestFunction("bounded_sin", freq=[1.0, 0.0])(xi), [0.0, np.sin(1.0)])
    np.testing.assert_array_equal(TestFunction("halfspace_indicator", normal=[0.0, 1.0])(xi), [1.0, 0.0])
    np.testing.assert_array_equal(TestFunction("constant_one")(xi), [1.0, 1.0])


def test_test_function_errors():
    with pytest.raises(InvalidInputError):
        TestFunction("step")
    with pytest.raises(InvalidInputError):
        TestFunction("gauss_bump", width=0.0)


def test_unstopped_direct_closed_form(kol, bump2):
    r = unstopped_direct(kol, bump2, X, 1.0, 200_000, 0)
    assert abs(r.mean - UNSTOPPED_BUMP) < 4 * r.stderr


def test_unstopped_cm_closed_form(kol, bump2):
    r = unstopped_cm(kol, bump2, X, 1.0, 200_000, 0)
    assert abs(r.mean - UNSTOPPED_BUMP) < 4 * r.stderr
    assert abs(r.info["weight_mean"] - 1.0) < 4 * r.info["weight_se"]


def test_large_domain_equals_unstopped(kol, bump2):
    grid = DyadicGrid(1.0, 5)
    big = make_ball_domain(100.0, 2)
    assert stopped_direct(kol, big, bump2, X, 1.0, grid, 5000, 3).mean == \
        stopped_direct(kol, None, bump2, X, 1.0, grid, 5000, 3).mean
    assert stopped_cm(kol, big, bump2, X, 1.0, grid, 5000, 3).mean == \
        stopped_cm(kol, None, bump2, X, 1.0, grid, 5000, 3).mean


def test_stopping_lowers_value(kol, ball2, bump2):
    grid = DyadicGrid(1.0, 6)
    stopped = stopped_direct(kol, ball2, bump2, X, 1.0, grid, 20_000, 0)
    free = stopped_direct(kol, None, bump2, X, 1.0, grid, 20_000, 0)
    assert stopped.mean < free.mean
    assert 0.0 < stopped.info["survival"] < 1.0


def test_start_outside_rejected(kol, ball2, bump2):
    with pytest.raises(DomainError):
        stopped_direct(kol, ball2, bump2, [1.0, 1.0], 1.0, DyadicGrid(1.0, 3), 100, 0)
    with pytest.raises(InvalidInputError):
        stopped_cm(kol, ball2, bump2, X, 1.0, DyadicGrid(2.0, 3), 100, 0)


def test_weight_mean_matches_discrete_exact(kol):
    r = cm_weight_mean(kol, X, 1.0, DyadicGrid(1.0, 7), 100_000, 0)
    assert r.info["exact"] == pytest.approx(1.0135, abs=1e-4)
    assert abs(r.mean - r.info["exact"]) < 4 * r.stderr


def test_weight_mean_bias_shrinks(kol):
    exact = [cm_weight_mean(kol, X, 1.0, DyadicGrid(1.0, n), 10, 0).info["exact"] for n in (3, 5, 7)]
    assert exact[0] > exact[1] > exact[2] > 1.0


@pytest.mark.parametrize("workers", [2, 3])
def test_results_independent_of_workers(kol, ball2, bump2, workers):
    grid = DyadicGrid(1.0, 5)
    one = stopped_cm(kol, ball2, bump2, X, 1.0, grid, 9000, 7, workers=1)
    many = stopped_cm(kol, ball2, bump2, X, 1.0, grid, 9000, 7, workers=workers)
    assert (one.mean, one.stderr, one.config_hash) == (many.mean, many.stderr, many.config_hash)


def test_lambda_cdf_monotone_and_density(kol, ball2):
    grid = DyadicGrid(1.0, 6)
    pts = lambda_cdf(kol, ball2, X, grid, 20_000, 0, np.linspace(0.2, 3.0, 8))
    ps = [p for _, p, _ in pts]
    assert ps == sorted(ps)
    dens = lambda_density(kol, ball2, X, grid, 20_000, 0)
    assert dens.mean > 0 and dens.info["shell_count"] >= 100


def test_lambda_density_bandwidth_error(kol, ball2):
    with pytest.raises(BandwidthError) as exc:
        lambda_density(kol, ball2, X, DyadicGrid(1.0, 4), 2000, 0, eps=1e-5)
    assert exc.value.suggested_eps > 1e-5


def test_ehrhard_linear_profile_passes():
    s = np.linspace(-2.0, 2.0, 12)
    p = ndtr(0.7 * s + 0.1)
    res = ehrhard_check([(a, b, np.sqrt(b * (1 - b) / 10**6)) for a, b in zip(s, p)], m=10**6)
    assert res["max_concavity_violation_in_se"] < 1e-6
    assert res["monotone"]


def test_ehrhard_convex_profile_flagged():
    s = np.linspace(0.1, 2.0, 10)
    p = ndtr(s**2 - 1.0)
    res = ehrhard_check([(a, b, np.sqrt(b * (1 - b) / 10**6)) for a, b in zip(s, p)], m=10**6)
    assert res["max_concavity_violation_in_se"] > 10


def test_ehrhard_excludes_degenerate_points():
    res = ehrhard_check([(0.0, 0.0, 0.0), (1.0, 0.3, 0.01), (2.0, 0.6, 0.01), (3.0, 0.8, 0.01), (4.0, 1.0, 0.0)])
    assert res["excluded"] == [0.0, 4.0]
    assert len(res["violations"]) == 1
