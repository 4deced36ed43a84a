import math

import mpmath
import numpy as np
import pytest
from scipy import special

from perpetuity.special import log_gammaincc, norm_cdf


@pytest.mark.parametrize("a", [0.5, 4.0, 40.0, 400.0, 1200.0])
@pytest.mark.parametrize("ratio", [0.3, 0.9, 1.0, 1.1, 2.0, 6.0])
def test_log_q_against_mpmath(a, ratio):
    x = a * ratio
    exact = float(mpmath.log(mpmath.gammainc(a, x, mpmath.inf, regularized=True)))
    assert log_gammaincc(a, x) == pytest.approx(exact, rel=1e-10, abs=1e-12)


def test_matches_scipy_where_representable():
    a = np.array([1.0, 3.0, 10.0, 25.0])
    x = np.array([0.5, 5.0, 8.0, 40.0])
    np.testing.assert_allclose(np.exp(log_gammaincc(a, x)), special.gammaincc(a, x), rtol=1e-12)


def test_deep_tail_stays_finite():
    # Q(4, 800) ~ 1e-340 underflows a double; its log does not
    v = log_gammaincc(4.0, 800.0)
    assert math.isfinite(v)
    assert v == pytest.approx(float(mpmath.log(mpmath.gammainc(4, 800, mpmath.inf, regularized=True))), rel=1e-12)


def test_nonpositive_x_gives_zero():
    assert log_gammaincc(3.0, 0.0) == 0.0


def test_norm_cdf_tails():
    assert norm_cdf(0.0) == 0.5
    assert norm_cdf(-10.0) == pytest.approx(7.619853024160527e-24, rel=1e-12)
