import numpy as np
import pytest

from stopou.domain import make_ball_domain
from stopou.errors import InvalidInputError, StabilityError
from stopou.estimators import TestFunction, unstopped_direct
from stopou.gradient import grad_main
from stopou.matrixcalc import OUModel
from stopou.pathlaw import DyadicGrid
from stopou.pde import Mesh2D, evaluate, gradient_fd, solve_dirichlet_2d

X = np.array([0.3, 0.2])


@pytest.fixture(scope="module")
def kol_solution():
    model = OUModel.kolmogorov()
    dom = make_ball_domain(1.0, 2)
    phi = TestFunction("gauss_bump", center=[0.0, 0.0], width=0.5)
    return solve_dirichlet_2d(model, dom, phi, 1.0, Mesh2D.for_domain(dom, 201))


def test_zero_data_gives_zero(kol, ball2):
    sol = solve_dirichlet_2d(kol, ball2, lambda xi: np.zeros(xi.shape[:-1]), 0.5, Mesh2D.for_domain(ball2, 51))
    assert np.all(sol["u"] == 0.0)


def test_maximum_principle(kol_solution):
    u = kol_solution["u"]
    assert u.min() >= 0.0 and u.max() <= 1.0
    assert np.all(u[~kol_solution["mask"]] == 0.0)


def test_unstable_step_reports_bound(kol, ball2, bump2):
    mesh = Mesh2D.for_domain(ball2, 51)
    bound = mesh.stable_dt(kol)
    with pytest.raises(StabilityError) as exc:
        solve_dirichlet_2d(kol, ball2, bump2, 0.1, Mesh2D.for_domain(ball2, 51, dt=2 * bound))
    assert exc.value.suggested_dt == pytest.approx(bound)


def test_model_restrictions(ball2, bump2):
    mesh = Mesh2D.for_domain(ball2, 21)
    with pytest.raises(InvalidInputError):
        solve_dirichlet_2d(OUModel.from_arrays([[0.0, 0.0], [1.0, 0.0]], np.eye(2)), ball2, bump2, 0.1, mesh)
    with pytest.raises(InvalidInputError):
        solve_dirichlet_2d(OUModel.brownian(1), make_ball_domain(1.0, 1), bump2, 0.1, mesh)
    with pytest.raises(InvalidInputError):
        Mesh2D((0.0, 0.0), (1.0, 1.0), (2, 5))


def test_short_time_large_domain_matches_unstopped(kol, bump2):
    dom = make_ball_domain(9.0, 2)
    sol = solve_dirichlet_2d(kol, dom, bump2, 0.3, Mesh2D.for_domain(dom, 241))
    ref = unstopped_direct(kol, bump2, X, 0.3, 200_000, 0)
    assert float(evaluate(sol, X)[0]) == pytest.approx(ref.mean, abs=4 * ref.stderr + 5e-3)


def test_mesh_refinement_converges(kol, ball2, bump2):
    vals = [float(evaluate(solve_dirichlet_2d(kol, ball2, bump2, 0.5, Mesh2D.for_domain(ball2, n)), X)[0])
            for n in (51, 101, 201)]
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])
    assert abs(vals[2] - vals[1]) < 0.02


def test_pde_gradient_matches_grad_main(kol_solution, kol, ball2, bump2):
    y = np.array([1.0, 0.0])
    pde = gradient_fd(kol_solution, X, y)
    mc = grad_main(kol, ball2, bump2, X, y, 1.0, DyadicGrid(1.0, 7), 100_000, 11)
    assert abs(mc.total - pde) < max(0.1 * abs(pde), 4 * mc.total_stderr)
