import math
import warnings

import numpy as np
import pytest
from scipy import stats

from perpetuity import (
    DegenerateModelError,
    DomainError,
    GammaFactor,
    TruncationError,
    UnsupportedModelError,
    ValidationError,
    horizon,
    is_tail_p,
    kesten_ratio,
    leading_tail,
    normal_approx_tail,
    renewal_tail,
    solve_alpha,
    tail_curve,
    tilted_exact_tail,
)
from perpetuity.cramer import CramerSolution
from perpetuity.tail import adaptive_horizon, log_grid, remainder_bound, tilted_exact_terms

# sum_{n=1}^{20} Phi((20 - n) / sqrt(n)) / 20, evaluated independently with mpmath
LN_RATIO_AT_20 = 0.909320194626731972


def unit_sol(m=1.0, sigma2=1.0, alpha=1.0):
    return CramerSolution(alpha=alpha, m_alpha=m, sigma2_alpha=sigma2, drift=-1.0, signed=False,
                          p_positive=1.0, m_tilde=m, sigma2_tilde=sigma2, leading_constant=2.0 / m)


class TestHorizon:
    def test_plain(self):
        assert horizon(unit_sol(), log_x=10.0).n_max == 10

    def test_xi(self):
        assert horizon(unit_sol(), log_x=10.0, xi=0.2).n_max == 12

    def test_lognormal(self, lognormal_sol):
        assert horizon(lognormal_sol, math.exp(20.0)).n_max == 20

    def test_x_below_one(self):
        with pytest.raises(DomainError):
            horizon(unit_sol(), 0.5)

    def test_needs_exactly_one_of_x_and_log_x(self):
        with pytest.raises(ValidationError):
            horizon(unit_sol())
        with pytest.raises(ValidationError):
            horizon(unit_sol(), 3.0, log_x=1.0)


def test_leading_tail_lognormal(lognormal_sol):
    # constant 2/m = 2, alpha = 2
    assert leading_tail(lognormal_sol, log_x=20.0) == pytest.approx(40 * math.exp(-40), rel=1e-13)


class TestNormalApprox:
    def test_twenty_terms(self, lognormal_sol):
        n = np.arange(1, 21)
        direct = 2 * math.exp(-40) * stats.norm.cdf((20 - n) / np.sqrt(n)).sum()
        assert normal_approx_tail(lognormal_sol, log_x=20.0) == pytest.approx(direct, rel=1e-12)

    def test_ratio_oracle(self, lognormal_sol):
        r = normal_approx_tail(lognormal_sol, log_x=20.0) / leading_tail(lognormal_sol, log_x=20.0)
        assert r == pytest.approx(LN_RATIO_AT_20, rel=1e-10)

    def test_single_term(self, lognormal_sol):
        lx = 1.5
        expected = 2 * math.exp(-2 * lx) * stats.norm.cdf(lx - 1.0)
        assert normal_approx_tail(lognormal_sol, log_x=lx) == pytest.approx(expected, rel=1e-12)

    def test_below_first_summand(self, lognormal_sol):
        with pytest.raises(DomainError):
            normal_approx_tail(lognormal_sol, log_x=0.5)

    def test_degenerate_variance(self):
        sol = unit_sol(sigma2=0.0)
        with pytest.raises(DegenerateModelError):
            normal_approx_tail(sol, log_x=5.0)

    @pytest.mark.parametrize("lx", [1.2, 7.0, 33.3, 250.0])
    def test_bounded_by_twice_horizon(self, lognormal_sol, lx):
        g0 = horizon(lognormal_sol, log_x=lx).n_max
        assert normal_approx_tail(lognormal_sol, log_x=lx) * math.exp(2 * lx) <= 2 * g0

    def test_signed_uses_block_chain(self):
        from perpetuity import LogNormal, SignedMixture

        sm = SignedMixture(LogNormal(-1.0, 1.0), 0.3)
        sol = solve_alpha(sm)
        lx = 40.0
        g0 = math.floor(lx / (2 * sol.m_alpha))
        n = np.arange(1, g0 + 1)
        z = (lx - n * sol.m_tilde) / np.sqrt(n * sol.sigma2_tilde)
        expected = 2 * math.exp(-sol.alpha * lx) * stats.norm.cdf(z).sum()
        assert normal_approx_tail(sol, log_x=lx) == pytest.approx(expected, rel=1e-12)


class TestTiltedExact:
    def test_terms_are_gamma_tails(self, loggamma, loggamma_sol):
        lx = 12.0
        terms = tilted_exact_terms(loggamma, loggamma_sol, 5, log_x=lx)
        n = np.arange(1, 6)
        direct = stats.gamma.sf(lx + 5.0 * n, 4.0 * n, scale=1.0) * math.exp(loggamma_sol.alpha * lx)
        np.testing.assert_allclose(terms, direct, rtol=1e-10)

    def test_zero_terms_raise(self, loggamma, loggamma_sol):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            with pytest.raises(TruncationError) as info:
                tilted_exact_tail(loggamma, loggamma_sol, log_x=20.0, n_terms=0)
        assert info.value.value == 0.0

    def test_short_sum_warns(self, loggamma, loggamma_sol):
        with pytest.warns(RuntimeWarning):
            with pytest.raises(TruncationError):
                tilted_exact_tail(loggamma, loggamma_sol, log_x=50.0, n_terms=3)

    def test_gamma_family_is_unsupported(self):
        g = GammaFactor(4.0, 6.0)
        with pytest.raises(UnsupportedModelError):
            tilted_exact_tail(g, solve_alpha(g), log_x=10.0)

    def test_other_families_are_unsupported(self, lognormal, lognormal_sol):
        with pytest.raises(UnsupportedModelError):
            tilted_exact_tail(lognormal, lognormal_sol, log_x=10.0)

    def test_horizon_choice_converges(self, loggamma, loggamma_sol):
        # beyond the adaptive horizon the partial sums no longer move
        lx = 40.0
        n = adaptive_horizon(loggamma, loggamma_sol, lx)
        a = tilted_exact_tail(loggamma, loggamma_sol, log_x=lx, n_terms=n)
        b = tilted_exact_tail(loggamma, loggamma_sol, log_x=lx, n_terms=2 * n)
        assert a == pytest.approx(b, rel=1e-3)

    def test_fixed_half_horizon_loses_mass_at_moderate_x(self, loggamma, loggamma_sol):
        # sigma^2(alpha) ~ 10 spreads the walk, so g_0.5 only catches up slowly;
        # this is why the default horizon is adaptive
        def captured(lx):
            g05 = horizon(loggamma_sol, log_x=lx, xi=0.5).n_max
            g40 = horizon(loggamma_sol, log_x=lx, xi=3.0).n_max
            a = math.fsum(tilted_exact_terms(loggamma, loggamma_sol, g05, log_x=lx))
            return a / math.fsum(tilted_exact_terms(loggamma, loggamma_sol, g40, log_x=lx))

        assert captured(30.0) < 0.75
        assert captured(700.0) == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("lx", [20.0, 60.0, 200.0])
    def test_renewal_limit(self, loggamma, loggamma_sol, lx):
        # x^alpha p(x) settles at 1 / (alpha m), with no log x growth
        v = tilted_exact_tail(loggamma, loggamma_sol, log_x=lx)
        assert v / renewal_tail(loggamma_sol, log_x=lx) == pytest.approx(1.0, abs=2e-3)

    def test_matches_importance_sampler(self, loggamma, loggamma_sol):
        lx = 20.0
        exact = tilted_exact_tail(loggamma, loggamma_sol, log_x=lx)
        est = is_tail_p(loggamma, loggamma_sol, log_x=lx, n_samples_per_n=20_000, seed=3)
        assert abs(est.value - exact) < 3 * est.std_error


class TestRemainder:
    def test_bound_dominates_exact_tail(self, loggamma, loggamma_sol):
        lx = 30.0
        n0 = horizon(loggamma_sol, log_x=lx).n_max
        exact_rest = math.fsum(tilted_exact_terms(loggamma, loggamma_sol, 4 * n0, log_x=lx)[n0:])
        exact_rest *= math.exp(-loggamma_sol.alpha * lx)
        assert remainder_bound(loggamma, n0, lx, loggamma_sol.alpha) >= exact_rest

    def test_bound_shrinks_with_horizon(self, lognormal, lognormal_sol):
        b = [remainder_bound(lognormal, n, 10.0, 2.0) for n in (10, 20, 40)]
        assert b[0] > b[1] > b[2]


class TestKesten:
    def test_at_e(self, lognormal_sol):
        assert kesten_ratio(lognormal_sol, 0.5, math.e) == pytest.approx(2 * 2.0 / 0.5)

    def test_doubles_when_x_squared(self, two_point_sol):
        a = kesten_ratio(two_point_sol, 1.0, log_x=7.0)
        b = kesten_ratio(two_point_sol, 1.0, log_x=14.0)
        assert b == pytest.approx(2 * a, rel=1e-15)

    def test_rejects_nonpositive_constant(self, two_point_sol):
        with pytest.raises(ValidationError):
            kesten_ratio(two_point_sol, 0.0, log_x=2.0)


class TestCurve:
    def test_grid_density(self):
        g = log_grid(20.0, 200.0)
        assert len(g) == 51 and g[0] == 20.0 and g[-1] == pytest.approx(200.0)

    def test_single_point_grid(self):
        assert log_grid(5.0, 5.0).tolist() == [5.0]

    def test_bad_grid(self):
        with pytest.raises(ValidationError):
            log_grid(0.0, 10.0)

    def test_curve_columns(self, loggamma, loggamma_sol):
        c = tail_curve(loggamma, loggamma_sol, [20.0, 40.0], columns=("leading", "normal"))
        assert c.tilted_exact is None and c.ratio_tilted is None
        assert len(c) == 2 and np.all(c.ratio_normal > 0)

    def test_unknown_column(self, loggamma, loggamma_sol):
        with pytest.raises(ValidationError):
            tail_curve(loggamma, loggamma_sol, [20.0], columns=("leading", "bogus"))

    def test_grid_must_increase(self, loggamma, loggamma_sol):
        with pytest.raises(ValidationError):
            tail_curve(loggamma, loggamma_sol, [40.0, 20.0])
