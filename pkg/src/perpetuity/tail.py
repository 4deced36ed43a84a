"""Analytic and semi-analytic tail evaluations for the perpetuity Y.

Functions accept either ``x`` or ``log_x`` (keyword) because interesting
values of x overflow a double long before log x becomes large.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .cramer import CramerSolution
from .errors import DegenerateModelError, DomainError, TruncationError, UnsupportedModelError, ValidationError
from .factor_models import FactorModel, GammaFactor, LogGamma
from .special import log_gammaincc, norm_cdf

__all__ = [
    "TruncationHorizon",
    "TailCurve",
    "horizon",
    "leading_tail",
    "normal_approx_tail",
    "tilted_exact_tail",
    "tilted_exact_terms",
    "renewal_tail",
    "kesten_ratio",
    "chernoff_log_term",
    "remainder_bound",
    "adaptive_horizon",
    "log_grid",
    "tail_curve",
]


def _resolve_log_x(x, log_x):
    if (x is None) == (log_x is None):
        raise ValidationError("give exactly one of x or log_x")
    if log_x is None:
        if not x > 0:
            raise DomainError(f"x must be positive, got {x!r}", bound=0.0)
        return math.log(x)
    return float(log_x)


@dataclass(frozen=True)
class TruncationHorizon:
    xi: float
    n_max: int


def horizon(sol: CramerSolution, x=None, xi: float = 0.0, *, log_x=None) -> TruncationHorizon:
    """g_xi(x) = floor((1 + xi) log x / m_tilde)."""
    lx = _resolve_log_x(x, log_x)
    if lx <= 0:
        raise DomainError("horizon needs x > 1", bound=1.0)
    # the tiny nudge keeps exact multiples (e.g. 12.000000000000002) from flooring down
    n = math.floor((1.0 + xi) * lx / sol.m_tilde * (1 + 1e-12))
    return TruncationHorizon(xi=xi, n_max=max(n, 0))


def leading_tail(sol: CramerSolution, x=None, *, log_x=None) -> float:
    """leading_constant * log x / x^alpha."""
    lx = _resolve_log_x(x, log_x)
    if lx <= 0:
        raise DomainError("leading_tail needs x > 1", bound=1.0)
    return sol.leading_constant * math.exp(math.log(lx) - sol.alpha * lx)


def renewal_tail(sol: CramerSolution, x=None, *, log_x=None) -> float:
    """x^-alpha / (alpha * m_tilde): the renewal-theorem limit of x^alpha p(x).

    Sum_n P(S_n > log x) for a walk with Cramer exponent alpha and tilted
    drift m_tilde converges to exp(-alpha log x) / (alpha m_tilde) in the
    non-lattice case.
    """
    lx = _resolve_log_x(x, log_x)
    return math.exp(-sol.alpha * lx) / (sol.alpha * sol.m_tilde)


def normal_approx_tail(sol: CramerSolution, x=None, *, log_x=None) -> float:
    """2 x^-alpha sum_{n <= g_0(x)} Phi((log x - n m~) / sqrt(n sigma~^2)).

    Signed models use the stopped-block chain (m~ = 2m). The prefactor is 2
    in both regimes; with the block horizon that reproduces the 1/m constant.
    """
    lx = _resolve_log_x(x, log_x)
    if not sol.sigma2_tilde > 0:
        raise DegenerateModelError(
            "sigma^2(alpha) = 0: the normal approximation is undefined; "
            "use the exact lattice sum (brute_force_p) instead"
        )
    g0 = horizon(sol, log_x=lx).n_max
    if g0 < 1:
        raise DomainError(
            f"x must exceed e^m~ = e^{sol.m_tilde:.6g} for at least one summand", bound=sol.m_tilde
        )
    n = np.arange(1, g0 + 1)
    z = (lx - n * sol.m_tilde) / np.sqrt(sol.sigma2_tilde * n)
    return 2.0 * math.exp(-sol.alpha * lx) * math.fsum(norm_cdf(z))


# --- remainder control -------------------------------------------------------


def chernoff_log_term(model: FactorModel, n: int, log_x: float, alpha: float) -> float:
    """min over 0 < g < alpha of log(x^-g h(g)^n): a bound on log P(|Pi_n| > x)."""
    hi = min(alpha, model.s_max) * (1 - 1e-9)
    res = optimize.minimize_scalar(
        lambda g: -g * log_x + n * float(model.log_h(g)),
        bounds=(1e-12, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return min(float(res.fun), 0.0)


def remainder_bound(model: FactorModel, n_max: int, log_x: float, alpha: float) -> float:
    """Upper bound on sum_{n > n_max} P(|Pi_n| > x) from per-term Chernoff bounds.

    The log of each bound is a minimum of functions linear in n, hence
    concave in n, so successive ratios decrease and a geometric series
    started from the first ratio below one bounds everything after it.
    """
    total = 0.0
    prev = None
    n = n_max + 1
    while n - n_max <= 200_000:
        t = math.exp(chernoff_log_term(model, n, log_x, alpha))
        total += t
        if t == 0.0:
            return total
        if prev is not None and t < prev:
            ratio = t / prev
            tail = t * ratio / (1 - ratio)
            if tail <= 1e-3 * total:
                return total + tail
        prev = t
        n += 1
    return math.inf


def adaptive_horizon(model, sol, log_x, rel_tol=1e-3, scale=None, start=None):
    """Smallest N >= g_0.5(x) with remainder_bound(N) <= rel_tol * scale.

    ``scale`` defaults to the renewal prediction of p(x).
    """
    if scale is None:
        scale = renewal_tail(sol, log_x=log_x)
    n = start if start is not None else max(horizon(sol, log_x=log_x, xi=0.5).n_max, 1)
    step = max(1, n // 8)
    while remainder_bound(model, n, log_x, sol.alpha) > rel_tol * scale:
        n += step
        if n > 10**5:
            raise TruncationError("adaptive horizon exceeded 1e5 terms")
    return n


# --- exact evaluation via the tilted gamma law ---------------------------------


def tilted_exact_terms(model: FactorModel, sol: CramerSolution, n_terms: int, *, x=None, log_x=None):
    """x^alpha P(Pi_n > x) for n = 1..n_terms (loggamma factors only).

    With X = exp(Z - mu) and Z ~ Gamma(gamma, beta), log Pi_n + n mu is
    Gamma(n gamma, beta), so P(Pi_n > x) = Q(n gamma, beta (log x + n mu)).
    Q is evaluated in log space, so terms far below 1e-308 stay accurate.
    """
    lx = _resolve_log_x(x, log_x)
    if isinstance(model, GammaFactor):
        raise UnsupportedModelError(
            "products of gamma factors have no closed-form tail; use the importance sampler"
        )
    if not isinstance(model, LogGamma):
        raise UnsupportedModelError(f"exact tilted evaluation needs loggamma factors, got {model.kind}")
    n = np.arange(1, n_terms + 1, dtype=float)
    log_q = log_gammaincc(n * model.gamma, model.beta * (lx + n * model.mu))
    return np.exp(sol.alpha * lx + np.atleast_1d(log_q))


def tilted_exact_tail(model: FactorModel, sol: CramerSolution, x=None, n_terms: int | None = None, *,
                      log_x=None, max_rel_remainder: float = 0.01) -> float:
    """p(x) = sum_n P(Pi_n > x), exact per term, truncated at n_terms.

    Default ``n_terms`` is the adaptive horizon (at least g_0.5(x)). Raises
    TruncationError when the remainder bound exceeds ``max_rel_remainder``
    of the partial sum.
    """
    lx = _resolve_log_x(x, log_x)
    if not isinstance(model, (LogGamma, GammaFactor)):
        raise UnsupportedModelError(f"exact tilted evaluation needs loggamma factors, got {model.kind}")
    if n_terms is None:
        n_terms = adaptive_horizon(model, sol, lx)
    if n_terms < 0:
        raise ValidationError("n_terms must be >= 0")
    g0 = horizon(sol, log_x=lx).n_max
    if n_terms < g0:
        warnings.warn(f"n_terms={n_terms} is below g_0(x)={g0}", RuntimeWarning, stacklevel=2)
    terms = tilted_exact_terms(model, sol, n_terms, log_x=lx) if n_terms else np.zeros(0)
    value = math.exp(-sol.alpha * lx) * math.fsum(terms)
    bound = remainder_bound(model, n_terms, lx, sol.alpha)
    if bound > max_rel_remainder * value:
        err = TruncationError(
            f"remainder bound {bound:.3e} exceeds {max_rel_remainder:.0%} of the partial sum {value:.3e}",
            bound=bound,
        )
        err.value = value
        raise err
    return value


def kesten_ratio(sol: CramerSolution, kesten_constant_estimate: float, x=None, *, log_x=None) -> float:
    """Asymptotic P(Y > x) / P(Y' > x) = 2 alpha log x / E[(XY'+1)^alpha - (XY')^alpha]."""
    lx = _resolve_log_x(x, log_x)
    if not kesten_constant_estimate > 0:
        raise ValidationError("kesten_constant_estimate must be positive")
    return 2.0 * sol.alpha * lx / kesten_constant_estimate


# --- curves -----------------------------------------------------------------


def log_grid(logx_min: float, logx_max: float, per_decade: int = 50) -> np.ndarray:
    """Points log-uniformly spaced in log x, ``per_decade`` per factor of 10."""
    if not 0 < logx_min <= logx_max:
        raise ValidationError("need 0 < logx_min <= logx_max")
    if logx_min == logx_max:
        return np.array([logx_min])
    num = max(2, int(math.ceil(per_decade * math.log10(logx_max / logx_min))) + 1)
    return np.geomspace(logx_min, logx_max, num)


@dataclass
class TailCurve:
    log_x: np.ndarray
    leading: np.ndarray
    normal_approx: np.ndarray | None = None
    tilted_exact: np.ndarray | None = None
    labels: dict = field(default_factory=dict)

    @property
    def xs(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_x)

    @property
    def ratio_normal(self):
        return None if self.normal_approx is None else self.normal_approx / self.leading

    @property
    def ratio_tilted(self):
        return None if self.tilted_exact is None else self.tilted_exact / self.leading

    def __len__(self):
        return len(self.log_x)


COLUMNS = ("leading", "normal", "tilted")


def tail_curve(model: FactorModel, sol: CramerSolution, log_x, columns=COLUMNS) -> TailCurve:
    """Evaluate the requested columns on a grid of log x values."""
    log_x = np.asarray(log_x, dtype=float)
    if log_x.ndim != 1 or len(log_x) == 0:
        raise ValidationError("log_x grid must be a non-empty 1-d array")
    if np.any(np.diff(log_x) <= 0):
        raise ValidationError("log_x grid must be strictly increasing")
    unknown = set(columns) - set(COLUMNS)
    if unknown:
        raise ValidationError(f"unknown column(s) {sorted(unknown)}; choose from {COLUMNS}")
    lead = np.array([leading_tail(sol, log_x=v) for v in log_x])
    curve = TailCurve(log_x=log_x, leading=lead, labels={"leading": "leading_constant*log(x)/x^alpha"})
    if "normal" in columns:
        curve.normal_approx = np.array([normal_approx_tail(sol, log_x=v) for v in log_x])
        curve.labels["normal_approx"] = "2 x^-alpha sum Phi((log x - n m)/sqrt(n sigma^2))"
    if "tilted" in columns:
        curve.tilted_exact = np.array([tilted_exact_tail(model, sol, log_x=v) for v in log_x])
        curve.labels["tilted_exact"] = "sum_n P(Pi_n > x), exact tilted gamma evaluation"
    return curve
