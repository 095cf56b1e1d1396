import numpy as np
import pytest

from stopou.oracles import (
    BGK_BETA,
    brownian_survival_density,
    brownian_survival_discrete_approx,
    brownian_two_sided_survival,
    brownian_two_sided_survival_eigen,
)


def test_reflection_frozen_value():
    assert brownian_two_sided_survival(1.0, 1.0) == pytest.approx(0.37077742979952, abs=1e-13)


@pytest.mark.parametrize("a,T", [(0.5, 0.3), (1.0, 1.0), (2.0, 0.5), (1.3, 4.0)])
def test_two_series_agree(a, T):
    assert brownian_two_sided_survival(a, T) == pytest.approx(brownian_two_sided_survival_eigen(a, T), abs=1e-12)


def test_scaling_and_limits():
    # Brownian scaling: P(sup|W| <= a, T) = P(sup|W| <= a / sqrt(T), 1)
    assert brownian_two_sided_survival(2.0, 4.0) == pytest.approx(brownian_two_sided_survival(1.0, 1.0), abs=1e-14)
    assert brownian_two_sided_survival(0.0, 1.0) == 0.0
    assert brownian_two_sided_survival(10.0, 1.0) == pytest.approx(1.0, abs=1e-15)


def test_beta_constant():
    from scipy.special import zeta

    assert BGK_BETA == pytest.approx(-zeta(0.5) / np.sqrt(2 * np.pi), rel=1e-14)


def test_discrete_approx_above_continuous():
    p = brownian_two_sided_survival(1.0, 1.0)
    vals = [brownian_survival_discrete_approx(1.0, 1.0, 2**n) for n in (4, 6, 8)]
    assert vals[0] > vals[1] > vals[2] > p


def test_density_positive_and_integrates():
    from scipy.integrate import quad

    assert brownian_survival_density(1.0, 1.0) > 0
    total, _ = quad(lambda r: brownian_survival_density(r, 1.0), 1e-3, 9.0, limit=200)
    assert total == pytest.approx(brownian_two_sided_survival(3.0, 1.0) - brownian_two_sided_survival(np.sqrt(1e-3), 1.0), abs=1e-5)
